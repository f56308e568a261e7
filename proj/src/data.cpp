#include "cxr/data.hpp"

#include "cxr/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cxr {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<Date> parse_date(const std::string& iso) {
  const std::string s = trim(iso);
  if (s.empty()) return std::nullopt;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  std::istringstream in(s);
  in >> y >> dash1 >> m >> dash2 >> d;
  if (!in || dash1 != '-' || dash2 != '-' || !in.eof())
    throw std::invalid_argument("invalid ISO-8601 date '" + s + "'");
  const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw std::invalid_argument("invalid calendar date '" + s + "'");
  return date;
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

std::string to_string(Label label) {
  switch (label) {
    case Label::kNormal: return "normal";
    case Label::kCovid: return "covid";
    case Label::kNonCovidPneumonia: return "pneumonia";
  }
  return "unknown";
}

std::string to_string(Partition partition) {
  return partition == Partition::kOriginal ? "original" : "covid_added";
}

std::optional<Label> parse_label(std::string text) {
  text = lower(trim(text));
  if (text == "normal") return Label::kNormal;
  if (text == "covid") return Label::kCovid;
  if (text == "pneumonia") return Label::kNonCovidPneumonia;
  return std::nullopt;
}

std::optional<Partition> parse_partition(std::string text) {
  text = lower(trim(text));
  if (text == "original") return Partition::kOriginal;
  if (text == "covid_added") return Partition::kCovidAdded;
  return std::nullopt;
}

void LabeledSample::validate() const {
  if (label == Label::kCovid && partition != Partition::kCovidAdded)
    throw std::invalid_argument("sample '" + image.source_id +
                                "': COVID samples belong to the covid_added partition");
  if (partition == Partition::kOriginal && label == Label::kCovid)
    throw std::invalid_argument("sample '" + image.source_id +
                                "': original partition holds normal/pneumonia only");
}

std::size_t TrainingCorpus::count(Partition p) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [p](const LabeledSample& s) { return s.partition == p; }));
}

std::size_t TrainingCorpus::count(Label l) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [l](const LabeledSample& s) { return s.label == l; }));
}

// ---------------------------------------------------------------------------
// Preprocessing

PreprocessResult preprocess(const RasterF& raw, std::string source_id) {
  if (raw.size() == 0) throw std::invalid_argument("preprocess: image has no pixels");
  PreprocessResult out;
  out.image.source_id = std::move(source_id);
  RasterF square = pad_to_square(raw);
  RasterF resized = resize_bilinear(square, kCanonicalSize, kCanonicalSize);
  if (!minmax_normalize(resized, out.image.pixels)) {
    out.image.pixels = RasterF::Zero(kCanonicalSize, kCanonicalSize);
    out.warnings.emplace_back("constant_input");
  }
  return out;
}

PreprocessResult preprocess(const DecodedImage& raw, std::string source_id) {
  const float full_scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  const RasterF scaled = raw.values.cast<float>() / full_scale;
  return preprocess(scaled, std::move(source_id));
}

// ---------------------------------------------------------------------------
// Splitting

std::array<std::size_t, 3> allocate_split(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  for (double v : r)
    if (!(v > 0.0)) throw std::invalid_argument("split ratios must be positive");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * r[i];
    const double fl = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    assigned += sizes[i];
  }
  // Hand out the remainder by largest fractional part, earlier bins first on ties.
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) sizes[order[k % 3]] += 1;
  return sizes;
}

std::array<SplitRatios, 3> default_split_ratios() {
  std::array<SplitRatios, 3> r;
  r[static_cast<int>(Label::kNormal)] = {0.8, 0.1, 0.1};
  r[static_cast<int>(Label::kNonCovidPneumonia)] = {0.8, 0.1, 0.1};
  r[static_cast<int>(Label::kCovid)] = {0.5, 0.25, 0.25};
  return r;
}

SplitResult split_dataset(const TrainingCorpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed) {
  return split_dataset(corpus, std::array<SplitRatios, 3>{ratios, ratios, ratios}, seed);
}

SplitResult split_dataset(const TrainingCorpus& corpus,
                          const std::array<SplitRatios, 3>& per_label, std::uint64_t seed) {
  SplitResult result;
  for (Label label : kAllLabels) {
    const auto li = static_cast<std::size_t>(label);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
      if (corpus.samples[i].label == label) members.push_back(i);
    if (members.empty()) continue;
    // Canonical order first, so the split depends on sample identity rather
    // than on the order of the corpus.
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return corpus.samples[a].image.source_id < corpus.samples[b].image.source_id;
    });
    Rng rng = Rng::derive(seed, li + 1);
    rng.shuffle(members);
    auto sizes = allocate_split(members.size(), per_label[li]);
    if (members.size() < 3) {
      sizes = {members.size(), 0, 0};
      result.warnings.push_back("class '" + to_string(label) + "' has only " +
                                std::to_string(members.size()) +
                                " sample(s); all placed in train");
    }
    auto it = members.begin();
    auto take = [&](std::vector<std::size_t>& dst, std::size_t k) {
      dst.insert(dst.end(), it, it + static_cast<std::ptrdiff_t>(k));
      it += static_cast<std::ptrdiff_t>(k);
    };
    take(result.split.train, sizes[0]);
    take(result.split.val, sizes[1]);
    take(result.split.test, sizes[2]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Balanced batching

BalancedBatcher::BalancedBatcher(std::vector<std::vector<std::size_t>> groups,
                                 std::size_t batch_size, std::uint64_t seed,
                                 std::vector<std::string> group_names)
    : groups_(std::move(groups)), batch_size_(batch_size), seed_(seed) {
  if (groups_.empty()) throw std::invalid_argument("balanced batching needs at least one group");
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].empty()) {
      const std::string name =
          g < group_names.size() ? group_names[g] : "group " + std::to_string(g);
      throw std::invalid_argument("balanced batching: group '" + name + "' is empty");
    }
    std::sort(groups_[g].begin(), groups_[g].end());
  }
  if (batch_size_ < groups_.size())
    throw std::invalid_argument("batch size " + std::to_string(batch_size_) +
                                " smaller than the number of groups " +
                                std::to_string(groups_.size()));
}

std::size_t BalancedBatcher::batches_per_epoch() const {
  const std::size_t g = groups_.size();
  std::size_t largest = 0;
  for (const auto& grp : groups_) largest = std::max(largest, grp.size());
  if (g == 1) return (largest + batch_size_ - 1) / batch_size_;
  // Every group receives floor(B/G) slots per batch plus a rotating share of
  // the remainder; stop once each group has been drawn at least |group| times.
  std::vector<std::size_t> drawn(g, 0);
  std::size_t batches = 0;
  auto satisfied = [&] {
    for (std::size_t i = 0; i < g; ++i)
      if (drawn[i] < groups_[i].size()) return false;
    return true;
  };
  while (!satisfied()) {
    for (std::size_t i = 0; i < g; ++i)
      drawn[i] += batch_size_ / g + (((i + g - batches % g) % g) < batch_size_ % g ? 1 : 0);
    ++batches;
  }
  return batches;
}

std::vector<std::vector<std::size_t>> BalancedBatcher::epoch(std::size_t index) const {
  const std::size_t g = groups_.size();
  const std::size_t batches = batches_per_epoch();
  Rng rng = Rng::derive(seed_, index);
  std::vector<std::vector<std::size_t>> out;
  if (g == 1) {
    std::vector<std::size_t> order = groups_[0];
    rng.shuffle(order);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * batch_size_;
      const std::size_t hi = std::min(order.size(), lo + batch_size_);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                       order.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
  }
  // Per-group draw streams made of consecutive shuffled passes.
  std::vector<std::vector<std::size_t>> streams(g);
  std::vector<std::size_t> cursor(g, 0);
  auto draw = [&](std::size_t i) {
    if (cursor[i] == streams[i].size()) {
      std::vector<std::size_t> pass = groups_[i];
      rng.shuffle(pass);
      streams[i].insert(streams[i].end(), pass.begin(), pass.end());
    }
    return streams[i][cursor[i]++];
  };
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (std::size_t i = 0; i < g; ++i) {
      const std::size_t quota =
          batch_size_ / g + (((i + g - b % g) % g) < batch_size_ % g ? 1 : 0);
      for (std::size_t k = 0; k < quota; ++k) batch.push_back(draw(i));
    }
    rng.shuffle(batch);
    out.push_back(std::move(batch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::validate() const {
  if (image_size < 64) throw std::invalid_argument("synthetic image_size must be >= 64");
  if (blob_count_min < 1 || blob_count_max < blob_count_min)
    throw std::invalid_argument("invalid blob count range");
  if (!(blob_radius_min > 0) || blob_radius_max < blob_radius_min)
    throw std::invalid_argument("invalid blob radius range");
  if (blob_intensity_max < blob_intensity_min || blob_intensity_min < 0)
    throw std::invalid_argument("invalid blob intensity range");
  if (!(covid_band_width > 0) || !(covid_texture_frequency > 0) || covid_intensity < 0)
    throw std::invalid_argument("invalid COVID texture parameters");
  if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  double radius(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return std::sqrt(dx * dx + dy * dy);
  }
};

LabeledSample synthesize(const SyntheticSpec& spec, Label label, std::size_t ordinal,
                         std::uint64_t stream) {
  Rng rng = Rng::derive(spec.seed, stream);
  const int n = spec.image_size;
  const double s = static_cast<double>(n) / 512.0;  // parameters are given at 512
  const double nd = static_cast<double>(n);

  const Ellipse body{nd * 0.5, nd * 0.55, nd * 0.42, nd * 0.45};
  const double lung_cy = nd * rng.uniform(0.47, 0.53);
  const Ellipse lungs[2] = {
      {nd * rng.uniform(0.30, 0.34), lung_cy, nd * rng.uniform(0.11, 0.14), nd * rng.uniform(0.25, 0.30)},
      {nd * rng.uniform(0.66, 0.70), lung_cy, nd * rng.uniform(0.11, 0.14), nd * rng.uniform(0.25, 0.30)}};
  const double rib_period = nd * rng.uniform(0.075, 0.09);
  const double rib_phase = rng.uniform(0.0, 6.283185307179586);
  const double tissue = rng.uniform(0.33, 0.38);
  const double lung_base = rng.uniform(0.14, 0.17);

  struct Blob {
    double x, y, sigma, peak;
  };
  std::vector<Blob> blobs;
  if (label == Label::kNonCovidPneumonia) {
    const int count = rng.integer(spec.blob_count_min, spec.blob_count_max);
    for (int k = 0; k < count; ++k) {
      const Ellipse& lung = lungs[rng.below(2)];
      double x = 0, y = 0;
      do {
        x = rng.uniform(lung.cx - lung.rx, lung.cx + lung.rx);
        y = rng.uniform(lung.cy - lung.ry, lung.cy + lung.ry);
      } while (lung.radius(x, y) > 0.75);
      blobs.push_back({x, y, s * rng.uniform(spec.blob_radius_min, spec.blob_radius_max),
                       rng.uniform(spec.blob_intensity_min, spec.blob_intensity_max)});
    }
  }
  const double tex_f = spec.covid_texture_frequency / s;
  const double tex_px = rng.uniform(0.0, 6.283185307179586);
  const double tex_py = rng.uniform(0.0, 6.283185307179586);
  const double band = spec.covid_band_width * s;

  LabeledSample sample;
  sample.label = label;
  sample.partition = label == Label::kCovid ? Partition::kCovidAdded : Partition::kOriginal;
  sample.image.source_id = "syn-" + to_string(label) + "-" + [&] {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%04zu", ordinal);
    return std::string(buf);
  }();
  RasterF pixels = RasterF::Zero(n, n);
  MaskRaster mask = MaskRaster::Zero(n, n);
  for (int y = 0; y < n; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5;
      const double rb = body.radius(px, py);
      if (rb > 1.0) continue;  // background stays exactly zero
      double v = tissue * std::min(1.0, (1.0 - rb) * 12.0);
      for (const auto& lung : lungs) {
        const double rl = lung.radius(px, py);
        if (rl > 1.0) continue;
        mask(y, x) = 1;
        v = lung_base + 0.035 * std::sin(6.283185307179586 * py / rib_period + rib_phase);
        if (label == Label::kCovid) {
          // Distance to the lung boundary, approximated in ellipse-radius units.
          const double depth = (1.0 - rl) * std::min(lung.rx, lung.ry);
          const double weight = std::clamp(1.0 - depth / band, 0.0, 1.0);
          const double texture = 0.5 + 0.5 * std::sin(6.283185307179586 * tex_f * px + tex_px) *
                                           std::sin(6.283185307179586 * tex_f * py + tex_py);
          v += spec.covid_intensity * weight * texture;
        }
        for (const auto& b : blobs) {
          const double d2 = (px - b.x) * (px - b.x) + (py - b.y) * (py - b.y);
          v += b.peak * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
      }
      pixels(y, x) = static_cast<float>(v + spec.noise_sigma * rng.normal());
    }
  }
  // Side marker burned into a corner at full intensity, as on clinical films.
  const int mw = std::max(4, static_cast<int>(18 * s));
  const int mh = std::max(6, static_cast<int>(28 * s));
  const int thick = std::max(2, static_cast<int>(6 * s));
  const int ox = rng.below(2) ? static_cast<int>(20 * s) : n - static_cast<int>(20 * s) - mw;
  const int oy = static_cast<int>(rng.uniform(14, 40) * s);
  for (int y = oy; y < oy + mh; ++y)
    for (int x = ox; x < ox + mw; ++x)
      if (x - ox < thick || y >= oy + mh - thick) pixels(y, x) = 1.0f;

  // Clamp and quantise to 16 bits so that written PNGs round-trip exactly.
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(pixels.data()[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    pixels.data()[i] = static_cast<float>(q) / 65535.0f;
  }
  sample.image.pixels = std::move(pixels);
  sample.truth_mask = std::move(mask);
  return sample;
}

}  // namespace

TrainingCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  TrainingCorpus corpus;
  std::uint64_t stream = 0;
  for (Label label : kAllLabels) {
    const std::size_t count = spec.counts[static_cast<std::size_t>(label)];
    for (std::size_t i = 0; i < count; ++i) {
      // Stream ids depend only on (label, ordinal).
      stream = (static_cast<std::uint64_t>(label) << 32) | i;
      corpus.samples.push_back(synthesize(spec, label, i, stream));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void assign_synthetic_timelines(TrainingCorpus& corpus, std::uint64_t seed,
                                std::size_t captures_per_case) {
  if (captures_per_case == 0) throw std::invalid_argument("captures_per_case must be positive");
  using std::chrono::days;
  using std::chrono::sys_days;
  std::vector<std::size_t> covid;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i)
    if (corpus.samples[i].label == Label::kCovid) covid.push_back(i);
  std::sort(covid.begin(), covid.end(), [&](std::size_t a, std::size_t b) {
    return corpus.samples[a].image.source_id < corpus.samples[b].image.source_id;
  });
  Rng rng(Rng::derive(seed, 4242));
  const sys_days first_onset = sys_days{Date{std::chrono::year{2020}, std::chrono::January, std::chrono::day{5}}};
  for (std::size_t start = 0; start < covid.size(); start += captures_per_case) {
    const std::size_t case_no = start / captures_per_case;
    char name[32];
    std::snprintf(name, sizeof name, "case-%03zu", case_no + 1);
    const sys_days onset = first_onset + days{static_cast<int>(rng.below(40))};
    const sys_days confirm = onset + days{3 + static_cast<int>(rng.below(15))};
    sys_days capture = onset + days{static_cast<int>(rng.below(6))};
    for (std::size_t k = start; k < std::min(start + captures_per_case, covid.size()); ++k) {
      auto& s = corpus.samples[covid[k]];
      s.case_id = name;
      s.symptom_onset_date = Date{onset};
      s.rtpcr_confirm_date = Date{confirm};
      s.image.capture_date = Date{capture};
      capture += days{1 + static_cast<int>(rng.below(5))};
    }
  }
}

ManifestLoad load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto rows = parse_csv(buffer.str());
  if (rows.empty()) throw std::runtime_error("manifest " + path.string() + " has no header");

  const std::vector<std::string> expected = {"source_id",    "path",
                                             "label",        "partition",
                                             "capture_date", "symptom_onset_date",
                                             "rtpcr_confirm_date"};
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < rows[0].size(); ++i) column[lower(trim(rows[0][i]))] = i;
  for (const auto& name : expected)
    if (!column.count(name))
      throw std::runtime_error("manifest " + path.string() + " lacks column '" + name + "'");

  const auto base = path.parent_path();
  ManifestLoad out;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto get = [&](const std::string& name) -> std::string {
      const auto idx = column[name];
      return idx < row.size() ? trim(row[idx]) : std::string{};
    };
    auto fail = [&](std::string msg) { out.errors.push_back({r, std::move(msg)}); };
    try {
      const std::string id = get("source_id");
      if (id.empty()) {
        fail("empty source_id");
        continue;
      }
      if (seen.count(id)) {
        fail("duplicate source_id '" + id + "'");
        continue;
      }
      const auto label = parse_label(get("label"));
      if (!label) {
        fail("unknown label '" + get("label") + "'");
        continue;
      }
      LabeledSample sample;
      sample.label = *label;
      const std::string part = get("partition");
      if (part.empty()) {
        sample.partition = *label == Label::kCovid ? Partition::kCovidAdded : Partition::kOriginal;
      } else if (auto p = parse_partition(part)) {
        sample.partition = *p;
      } else {
        fail("unknown partition '" + part + "'");
        continue;
      }
      sample.validate();
      std::filesystem::path image_path = get("path");
      if (image_path.is_relative()) image_path = base / image_path;
      if (!std::filesystem::exists(image_path)) {
        fail("missing image file " + image_path.string());
        continue;
      }
      auto pre = preprocess(read_image(image_path), id);
      sample.image = std::move(pre.image);
      sample.image.capture_date = parse_date(get("capture_date"));
      sample.symptom_onset_date = parse_date(get("symptom_onset_date"));
      sample.rtpcr_confirm_date = parse_date(get("rtpcr_confirm_date"));
      if (column.count("case_id")) sample.case_id = get("case_id");
      auto mask_path = image_path;
      mask_path.replace_extension(".mask.png");
      if (std::filesystem::exists(mask_path)) {
        const auto raw = read_image(mask_path);
        MaskRaster m = (raw.values > 0).cast<std::uint8_t>();
        if (m.rows() != kCanonicalSize || m.cols() != kCanonicalSize) {
          RasterF mf = pad_to_square(RasterF(m.cast<float>()));
          m = (resize_nearest(mf, kCanonicalSize, kCanonicalSize) > 0.5f).cast<std::uint8_t>();
        }
        sample.truth_mask = std::move(m);
      }
      seen.insert(id);
      out.corpus.samples.push_back(std::move(sample));
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  return out;
}

void write_corpus(const TrainingCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest under " + dir.string());
  const bool cases = std::any_of(corpus.samples.begin(), corpus.samples.end(),
                                 [](const LabeledSample& s) { return !s.case_id.empty(); });
  manifest << kManifestHeader << (cases ? ",case_id" : "") << '\n';
  auto date = [](const std::optional<Date>& d) { return d ? format_date(*d) : std::string{}; };
  for (const auto& s : corpus.samples) {
    const std::string rel = "images/" + s.image.source_id + ".png";
    write_file(dir / rel, encode_png_gray16(to_gray16(s.image.pixels)));
    if (s.truth_mask) {
      const Raster<std::uint8_t> m = (*s.truth_mask * std::uint8_t{255});
      write_file(dir / ("images/" + s.image.source_id + ".mask.png"), encode_png_gray8(m));
    }
    manifest << s.image.source_id << ',' << rel << ',' << to_string(s.label) << ','
             << to_string(s.partition) << ',' << date(s.image.capture_date) << ','
             << date(s.symptom_onset_date) << ',' << date(s.rtpcr_confirm_date);
    if (cases) manifest << ',' << s.case_id;
    manifest << '\n';
  }
}

}  // namespace cxr
