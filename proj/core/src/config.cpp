#include "xvmunet/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "xvmunet/errors.hpp"
#include "xvmunet/pnm.hpp"

namespace xvmunet::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': '" + value + "' is not " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// One entry per key: how to read it into a RunConfig and how to print it.
struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

#define SIZE_FIELD(KEY, MEMBER) \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_size(KEY, v); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define DOUBLE_FIELD(KEY, MEMBER) \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); }, \
        [](const RunConfig& c) { return format_double(c.MEMBER); }}
#define BOOL_FIELD(KEY, MEMBER) \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }, \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}
#define LIST_FIELD(KEY, MEMBER) \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_list(KEY, v); }, \
        [](const RunConfig& c) { return format_list(c.MEMBER); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("model.height", model.height),
      SIZE_FIELD("model.width", model.width),
      SIZE_FIELD("model.in_channels", model.in_channels),
      LIST_FIELD("model.widths", model.widths),
      LIST_FIELD("model.depths", model.depths),
      SIZE_FIELD("model.d_state", model.d_state),
      SIZE_FIELD("model.expand", model.expand),
      BOOL_FIELD("model.use_slstm", model.use_slstm),
      BOOL_FIELD("model.use_mlstm", model.use_mlstm),
      Field{"model.fusion",
            [](RunConfig& c, const std::string& v) {
              if (v == "learnable") c.model.fusion = net::FusionMode::Learnable;
              else if (v == "fixed") c.model.fusion = net::FusionMode::Fixed;
              else bad_value("model.fusion", v, "learnable or fixed");
            },
            [](const RunConfig& c) {
              return std::string(c.model.fusion == net::FusionMode::Learnable ? "learnable" : "fixed");
            }},
      BOOL_FIELD("model.share_ss2d_projections", model.share_ss2d_projections),
      SIZE_FIELD("model.slstm_heads", model.slstm_heads),
      DOUBLE_FIELD("model.proj_factor", model.proj_factor),
      Field{"model.discretization",
            [](RunConfig& c, const std::string& v) {
              if (v == "exact_zoh") c.model.discretization = ssm::Discretization::ExactZoh;
              else if (v == "first_order") c.model.discretization = ssm::Discretization::FirstOrder;
              else bad_value("model.discretization", v, "exact_zoh or first_order");
            },
            [](const RunConfig& c) {
              return std::string(c.model.discretization == ssm::Discretization::ExactZoh ? "exact_zoh"
                                                                                          : "first_order");
            }},
      SIZE_FIELD("train.epochs", train.epochs),
      SIZE_FIELD("train.batch_size", train.batch_size),
      SIZE_FIELD("train.folds", train.folds),
      DOUBLE_FIELD("train.val_fraction", train.val_fraction),
      SIZE_FIELD("train.seed", train.seed),
      DOUBLE_FIELD("train.lr", train.lr),
      DOUBLE_FIELD("train.lr_min", train.lr_min),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      DOUBLE_FIELD("train.beta1", train.beta1),
      DOUBLE_FIELD("train.beta2", train.beta2),
      DOUBLE_FIELD("train.adam_eps", train.adam_eps),
      DOUBLE_FIELD("train.lambda_bce", train.loss.lambda_bce),
      DOUBLE_FIELD("train.lambda_dice", train.loss.lambda_dice),
      DOUBLE_FIELD("train.loss_eps", train.loss.eps),
      DOUBLE_FIELD("train.dice_smooth", train.loss.smooth),
      SIZE_FIELD("data.count", data.count),
      SIZE_FIELD("data.resolution", data.resolution),
      SIZE_FIELD("data.channels", data.channels),
      SIZE_FIELD("data.min_ellipses", data.min_ellipses),
      SIZE_FIELD("data.max_ellipses", data.max_ellipses),
      DOUBLE_FIELD("data.radius_min", data.radius_min),
      DOUBLE_FIELD("data.radius_max", data.radius_max),
      DOUBLE_FIELD("data.contrast_min", data.contrast_min),
      DOUBLE_FIELD("data.contrast_max", data.contrast_max),
      SIZE_FIELD("data.blur_radius", data.blur_radius),
      DOUBLE_FIELD("data.noise", data.noise),
      SIZE_FIELD("data.seed", data.seed),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef LIST_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

bool is_model_key(const std::string& key) { return key.rfind("model.", 0) == 0; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::stringstream ss{std::string(text)};
  std::string line;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value', got '" + body + "'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

void apply_text(RunConfig& cfg, std::string_view text) {
  for (const auto& [key, value] : parse_key_values(text)) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
    f->read(cfg, value);
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  RunConfig cfg;
  apply_text(cfg, text);
  return cfg;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.write(cfg) + "\n";
  return out;
}

std::string model_text(const net::ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::string out;
  for (const auto& f : fields()) {
    if (is_model_key(f.key)) out += std::string(f.key) + " = " + f.write(cfg) + "\n";
  }
  return out;
}

net::ModelConfig parse_model_text(std::string_view text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) {
    const Field* f = find_field(key);
    if (f == nullptr || !is_model_key(key)) throw ConfigError("unexpected model config key '" + key + "'");
    f->read(cfg, value);
  }
  cfg.model.validate();
  return cfg.model;
}

std::string config_hash(const net::ModelConfig& model) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(model_text(model))));
  return buf;
}

}  // namespace xvmunet::config
