#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sparseful/harness.hpp"

namespace sparseful::harness {

ConfigError::ConfigError(std::size_t line, const std::string& message)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(std::string_view v, std::size_t line, std::string_view key) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(line, "'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_u64(std::string_view v, std::size_t line, std::string_view key) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError(line, "'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::size_t to_size(std::string_view v, std::size_t line, std::string_view key) {
  return static_cast<std::size_t>(to_u64(v, line, key));
}

bool to_bool(std::string_view v, std::size_t line, std::string_view key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(line, "'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

void require(bool ok, std::size_t line, std::string_view key, std::string_view what) {
  if (!ok) throw ConfigError(line, "'" + std::string(key) + "' out of range: " + std::string(what));
}

struct Key {
  std::function<void(ExperimentConfig&, std::string_view, std::size_t, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using KeyTable = std::map<std::string, std::map<std::string, Key>>;

template <typename Member>
Key positive_double(Member member) {
  return {[member](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
            const double x = to_double(v, line, key);
            require(x > 0.0, line, key, "must be positive");
            member(c) = x;
          },
          [member](const ExperimentConfig& c) { return format_double(member(c)); }};
}

template <typename Member>
Key count_at_least(Member member, std::size_t minimum) {
  return {[member, minimum](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
            const auto x = to_size(v, line, key);
            require(x >= minimum, line, key, "must be at least " + std::to_string(minimum));
            member(c) = x;
          },
          [member](const ExperimentConfig& c) { return std::to_string(member(c)); }};
}

template <typename Member>
Key path_key(Member member) {
  return {[member](ExperimentConfig& c, std::string_view v, std::size_t, std::string_view) { member(c) = std::string(v); },
          [member](const ExperimentConfig& c) { return member(c).string(); }};
}

#define SPARSEFUL_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

const KeyTable& key_table() {
  static const KeyTable table = [] {
    KeyTable t;
    auto& e = t["environment"];
    e["width"] = positive_double(SPARSEFUL_MEMBER(environment.width));
    e["height"] = positive_double(SPARSEFUL_MEMBER(environment.height));
    e["rows"] = count_at_least(SPARSEFUL_MEMBER(environment.rows), 1);
    e["cols"] = count_at_least(SPARSEFUL_MEMBER(environment.cols), 1);
    e["devices"] = count_at_least(SPARSEFUL_MEMBER(environment.devices), 1);
    e["radius"] = positive_double(SPARSEFUL_MEMBER(environment.radius));
    e["placement"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                        const auto p = env::parse_placement(v);
                        if (!p) throw ConfigError(line, "'" + std::string(key) + "' must be uniform-random or jittered-grid");
                        c.environment.placement = *p;
                      },
                      [](const ExperimentConfig& c) { return std::string(env::to_string(c.environment.placement)); }};
    e["seed"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                   c.environment.seed = to_u64(v, line, key);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.environment.seed); }};

    auto& d = t["data"];
    d["kind"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                   const auto k = env::parse_distribution_kind(v);
                   if (!k) throw ConfigError(line, "'" + std::string(key) + "' must be synthetic-blobs or idx-label-skew");
                   c.data.kind = *k;
                 },
                 [](const ExperimentConfig& c) { return std::string(env::to_string(c.data.kind)); }};
    d["samples"] = count_at_least(SPARSEFUL_MEMBER(data.samples), 2);
    d["validation_fraction"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                                  const double x = to_double(v, line, key);
                                  require(x > 0.0 && x < 1.0, line, key, "must lie in (0, 1)");
                                  c.data.validation_fraction = x;
                                },
                                [](const ExperimentConfig& c) { return format_double(c.data.validation_fraction); }};
    d["test_samples"] = count_at_least(SPARSEFUL_MEMBER(data.test_samples), 1);
    d["mixing"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                     const double x = to_double(v, line, key);
                     require(x >= 0.0 && x < 1.0, line, key, "must lie in [0, 1)");
                     c.data.mixing = x;
                   },
                   [](const ExperimentConfig& c) { return format_double(c.data.mixing); }};
    d["feature_dim"] = count_at_least(SPARSEFUL_MEMBER(data.feature_dim), 1);
    d["classes_per_region"] = count_at_least(SPARSEFUL_MEMBER(data.classes_per_region), 1);
    d["blob_std"] = positive_double(SPARSEFUL_MEMBER(data.blob_std));
    d["idx_images"] = path_key(SPARSEFUL_MEMBER(data.idx_images));
    d["idx_labels"] = path_key(SPARSEFUL_MEMBER(data.idx_labels));
    d["idx_test_images"] = path_key(SPARSEFUL_MEMBER(data.idx_test_images));
    d["idx_test_labels"] = path_key(SPARSEFUL_MEMBER(data.idx_test_labels));

    auto& m = t["model"];
    m["hidden"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                     std::vector<std::size_t> widths;
                     while (!v.empty()) {
                       const auto comma = v.find(',');
                       const auto item = trim(v.substr(0, comma));
                       const auto w = to_size(item, line, key);
                       require(w >= 1, line, key, "hidden widths must be positive");
                       widths.push_back(w);
                       v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
                     }
                     c.model.hidden = std::move(widths);
                   },
                   [](const ExperimentConfig& c) {
                     std::string out;
                     for (std::size_t i = 0; i < c.model.hidden.size(); ++i)
                       out += (i ? "," : "") + std::to_string(c.model.hidden[i]);
                     return out;
                   }};

    auto& p = t["protocol"];
    p["tau"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                  if (v == "auto") {
                    c.protocol.tau.reset();
                    return;
                  }
                  const double x = to_double(v, line, key);
                  require(x >= 0.0, line, key, "must be non-negative");
                  c.protocol.tau = x;
                },
                [](const ExperimentConfig& c) { return c.protocol.tau ? format_double(*c.protocol.tau) : std::string("auto"); }};
    p["compression"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                          const auto k = compression::parse_kind(v);
                          if (!k)
                            throw ConfigError(line, "'" + std::string(key) +
                                                        "' must be dense, sparse, quantized or sparse+quantized");
                          c.protocol.compression = *k;
                        },
                        [](const ExperimentConfig& c) { return std::string(compression::to_string(c.protocol.compression)); }};
    p["psi"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                  const double x = to_double(v, line, key);
                  require(x >= 0.0 && x <= 1.0, line, key, "must lie in [0, 1]");
                  c.protocol.psi = x;
                },
                [](const ExperimentConfig& c) { return format_double(c.protocol.psi); }};
    p["similarity_uses_compressed"] = {
        [](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
          c.protocol.similarity_uses_compressed = to_bool(v, line, key);
        },
        [](const ExperimentConfig& c) { return std::string(c.protocol.similarity_uses_compressed ? "true" : "false"); }};
    p["rounds"] = count_at_least(SPARSEFUL_MEMBER(protocol.rounds), 1);
    p["local_epochs"] = count_at_least(SPARSEFUL_MEMBER(protocol.local_epochs), 1);
    p["batch_size"] = count_at_least(SPARSEFUL_MEMBER(protocol.batch_size), 1);
    p["learning_rate"] = positive_double(SPARSEFUL_MEMBER(protocol.learning_rate));
    p["calibration_rounds"] = count_at_least(SPARSEFUL_MEMBER(protocol.calibration_rounds), 1);

    auto& o = t["output"];
    o["csv"] = path_key(SPARSEFUL_MEMBER(output.csv));
    o["checkpoint_dir"] = path_key(SPARSEFUL_MEMBER(output.checkpoint_dir));
    o["wall_time"] = {[](ExperimentConfig& c, std::string_view v, std::size_t line, std::string_view key) {
                        c.output.wall_time = to_bool(v, line, key);
                      },
                      [](const ExperimentConfig& c) { return std::string(c.output.wall_time ? "true" : "false"); }};
    return t;
  }();
  return table;
}

#undef SPARSEFUL_MEMBER

constexpr std::string_view kSectionOrder[] = {"environment", "data", "model", "protocol", "output"};

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  const auto& table = key_table();
  std::map<std::string, std::size_t> seen;  // "section.key" -> line
  std::string section;
  std::size_t line_no = 0;

  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!table.contains(section)) throw ConfigError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(line_no, "key '" + key + "' appears before any section");
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(line_no, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.emplace(section + "." + key, line_no).second) throw ConfigError(line_no, "duplicate key '" + key + "'");
    it->second.set(cfg, value, line_no, key);
  }

  auto line_of = [&](const std::string& k) {
    const auto it = seen.find(k);
    return it == seen.end() ? std::size_t{0} : it->second;
  };

  if (!seen.contains("environment.radius")) {
    const auto area = env::build_area(cfg.environment.width, cfg.environment.height, cfg.environment.rows,
                                      cfg.environment.cols);
    cfg.environment.radius = 1.5 * env::lattice_pitch(area, cfg.environment.devices);
  }
  if (cfg.data.kind == env::DistributionKind::idx_label_skew) {
    if (cfg.data.idx_images.empty() || cfg.data.idx_labels.empty())
      throw ConfigError(line_of("data.kind"), "idx-label-skew needs idx_images and idx_labels");
    if (cfg.data.idx_test_images.empty() != cfg.data.idx_test_labels.empty())
      throw ConfigError(line_of("data.idx_test_images") ? line_of("data.idx_test_images") : line_of("data.idx_test_labels"),
                        "idx_test_images and idx_test_labels must be given together");
  }
  for (const char* k : {"idx_images", "idx_labels", "idx_test_images", "idx_test_labels"}) {
    const std::string full = std::string("data.") + k;
    const auto& member = k == std::string_view("idx_images")        ? cfg.data.idx_images
                         : k == std::string_view("idx_labels")      ? cfg.data.idx_labels
                         : k == std::string_view("idx_test_images") ? cfg.data.idx_test_images
                                                                    : cfg.data.idx_test_labels;
    if (!member.empty() && !std::filesystem::exists(member))
      throw ConfigError(line_of(full), "file not found: " + member.string());
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  const auto& table = key_table();
  std::string out;
  for (auto section : kSectionOrder) {
    out += "[" + std::string(section) + "]\n";
    for (const auto& [key, k] : table.at(std::string(section))) out += key + " = " + k.get(cfg) + "\n";
    out += "\n";
  }
  return out;
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.environment.seed = seed;
  return cfg;
}

}  // namespace sparseful::harness
