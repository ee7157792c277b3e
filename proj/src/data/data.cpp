#include "fvlfp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fvlfp/error.hpp"
#include "fvlfp/rng.hpp"

namespace fvlfp::data {

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
  Dataset out;
  out.height = height;
  out.width = width;
  out.feature_dim = feature_dim;
  out.values.reserve(ids.size() * feature_dim);
  for (auto i : ids) {
    if (i >= size()) throw DataError("subset: sample id " + std::to_string(i) + " out of range");
    auto s = sample(i);
    out.values.insert(out.values.end(), s.begin(), s.end());
    out.labels.push_back(labels[i]);
    out.groups.push_back(groups[i]);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (n < 1) throw ConfigError("synthetic n must be at least 1");
  if (patch_size == 0 || image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
  if (image_size / patch_size < 2) throw ConfigError("synthetic images need at least a 2x2 patch grid");
  if (!(spurious_strength >= 0.0 && spurious_strength <= 1.0)) {
    throw ConfigError("spurious_strength (rho) must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!std::isfinite(label_signal) || !std::isfinite(group_signal)) throw ConfigError("signals must be finite");
}

std::vector<std::size_t> label_patches(const SyntheticSpec& spec) {
  const std::size_t grid = spec.image_size / spec.patch_size;
  // Upper half, left and right of centre.
  return {(grid / 2 - 1) * grid + (grid / 2 - 1), (grid / 2 - 1) * grid + grid / 2};
}

std::vector<std::size_t> group_patches(const SyntheticSpec& spec) {
  const std::size_t grid = spec.image_size / spec.patch_size;
  return {(grid - 1) * grid, (grid - 1) * grid + grid - 1};
}

std::vector<double> pattern_image(const SyntheticSpec& spec, bool group_pattern) {
  const std::size_t s = spec.image_size, p = spec.patch_size, grid = s / p;
  std::vector<double> img(s * s, 0.0);
  Rng rng(derive_seed(spec.pattern_seed, group_pattern ? "group-texture" : "label-texture"));
  std::bernoulli_distribution coin(0.5);
  for (auto patch : group_pattern ? group_patches(spec) : label_patches(spec)) {
    const std::size_t py = patch / grid, px = patch % grid;
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) img[(py * p + y) * s + px * p + x] = coin(rng) ? 1.0 : -1.0;
  }
  return img;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t pixels = spec.image_size * spec.image_size;
  const auto lab = pattern_image(spec, false);
  const auto grp = pattern_image(spec, true);
  Dataset ds;
  ds.height = ds.width = spec.image_size;
  ds.feature_dim = pixels;
  ds.values.resize(spec.n * pixels);
  ds.labels.resize(spec.n);
  ds.groups.resize(spec.n);
  Rng rng(derive_seed(spec.seed, "synthetic-samples"));
  std::bernoulli_distribution coin(0.5), copy(spec.spurious_strength);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int y = coin(rng) ? 1 : 0;
    const bool copied = copy(rng);
    const bool flip = coin(rng);
    const int g = copied ? y : (flip ? 1 : 0);
    ds.labels[i] = y;
    ds.groups[i] = g;
    const double sy = y == 1 ? spec.label_signal : -spec.label_signal;
    const double sg = g == 1 ? spec.group_signal : -spec.group_signal;
    double* out = ds.values.data() + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) {
      const double v = 0.5 + sy * lab[j] + sg * grp[j] + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
      out[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return ds;
}

namespace {

std::vector<std::size_t> largest_remainder(const std::vector<double>& props, std::size_t total) {
  const std::size_t n = props.size();
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> rem(n);
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = props[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rem[i] = {exact - std::floor(exact), i};
  }
  // Ties go to the lower client index.
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++counts[rem[i % n].second];
  return counts;
}

}  // namespace

Partition dirichlet_partition(std::span<const int> labels, std::span<const int> groups, std::size_t clients,
                              double alpha, std::uint64_t seed) {
  if (labels.size() != groups.size()) throw DimensionError("dirichlet_partition: label/group length mismatch");
  if (clients < 1) throw ConfigError("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be positive");
  if (clients > labels.size()) {
    throw DataError("dirichlet_partition: " + std::to_string(clients) + " clients for " +
                    std::to_string(labels.size()) + " samples");
  }
  Partition part;
  part.alpha = alpha;
  part.shards.assign(clients, {});
  Rng rng(derive_seed(seed, "dirichlet-partition"));
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (int y = 0; y < 2; ++y) {
    for (int g = 0; g < 2; ++g) {
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == y && groups[i] == g) cell.push_back(i);
      std::shuffle(cell.begin(), cell.end(), rng);
      std::vector<double> props(clients);
      double sum = 0.0;
      for (auto& p : props) sum += (p = gamma(rng));
      if (!(sum > 0.0)) {
        std::fill(props.begin(), props.end(), 1.0 / static_cast<double>(clients));
      } else {
        for (auto& p : props) p /= sum;
      }
      const auto counts = largest_remainder(props, cell.size());
      std::size_t at = 0;
      for (std::size_t c = 0; c < clients; ++c)
        for (std::size_t k = 0; k < counts[c]; ++k) part.shards[c].push_back(cell[at++]);
    }
  }
  for (;;) {
    auto empty = std::find_if(part.shards.begin(), part.shards.end(), [](const auto& s) { return s.empty(); });
    if (empty == part.shards.end()) break;
    auto largest = std::max_element(part.shards.begin(), part.shards.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    empty->push_back(largest->back());
    largest->pop_back();
  }
  for (auto& s : part.shards) std::sort(s.begin(), s.end());
  return part;
}

std::vector<std::size_t> balanced_test_sample(std::span<const int> labels, std::span<const int> groups,
                                              std::size_t size, std::uint64_t seed,
                                              std::span<const std::size_t> exclude) {
  if (labels.size() != groups.size()) throw DimensionError("balanced_test_sample: label/group length mismatch");
  if (size % 4 != 0) {
    throw ConfigError("balanced_test_sample: size " + std::to_string(size) +
                      " is not divisible by the 4 (label, group) cells");
  }
  const std::size_t per = size / 4;
  const std::set<std::size_t> skip(exclude.begin(), exclude.end());
  Rng rng(derive_seed(seed, "balanced-sample"));
  std::vector<std::size_t> out;
  out.reserve(size);
  for (int y = 0; y < 2; ++y) {
    for (int g = 0; g < 2; ++g) {
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == y && groups[i] == g && !skip.count(i)) cell.push_back(i);
      if (cell.size() < per) {
        throw DataError("balanced_test_sample: cell (y=" + std::to_string(y) + ", g=" + std::to_string(g) +
                        ") has " + std::to_string(cell.size()) + " samples, need " + std::to_string(per));
      }
      std::shuffle(cell.begin(), cell.end(), rng);
      out.insert(out.end(), cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(per));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + msg);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

Dataset load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path);
  std::string line;
  if (!std::getline(in, line)) parse_fail(path, 1, "missing header");
  std::size_t dim = 0, count = 0;
  {
    std::istringstream hs(line);
    std::string a, b, extra;
    hs >> a >> b;
    if (hs >> extra || a.rfind("dim=", 0) != 0 || b.rfind("count=", 0) != 0 ||
        !parse_number(std::string_view(a).substr(4), dim) || !parse_number(std::string_view(b).substr(6), count)) {
      parse_fail(path, 1, "header must be 'dim=<d> count=<n>'");
    }
    if (dim == 0) parse_fail(path, 1, "dim must be positive");
  }
  Dataset ds;
  ds.feature_dim = dim;
  ds.values.reserve(dim * count);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != dim + 2) {
      parse_fail(path, lineno, "expected " + std::to_string(dim) + " values after y,g, found " +
                                   std::to_string(fields.size() < 2 ? 0 : fields.size() - 2));
    }
    int y = 0, g = 0;
    if (!parse_number(fields[0], y) || (y != 0 && y != 1)) parse_fail(path, lineno, "label must be 0 or 1");
    if (!parse_number(fields[1], g) || (g != 0 && g != 1)) parse_fail(path, lineno, "group must be 0 or 1");
    for (std::size_t j = 0; j < dim; ++j) {
      double v = 0.0;
      if (!parse_number(fields[j + 2], v) || !std::isfinite(v)) {
        parse_fail(path, lineno, "bad value in column " + std::to_string(j + 3));
      }
      ds.values.push_back(v);
    }
    ds.labels.push_back(y);
    ds.groups.push_back(g);
  }
  if (ds.size() != count) {
    parse_fail(path, lineno, "header declares " + std::to_string(count) + " rows, found " + std::to_string(ds.size()));
  }
  return ds;
}

void write_embeddings(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file " + path);
  out << "dim=" << ds.feature_dim << " count=" << ds.size() << "\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i] << ',' << ds.groups[i];
    for (double v : ds.sample(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace fvlfp::data
