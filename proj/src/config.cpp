#include "dmsd/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmsd/core.hpp"

namespace dmsd {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_triple(const std::array<double, 3>& v) {
  return fmt_double(v[0]) + "," + fmt_double(v[1]) + "," + fmt_double(v[2]);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config: invalid boolean for " + key + ": " + s);
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw ConfigError("config: invalid number for " + key + ": " + s);
  }
}

int parse_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<int>(v);
  } catch (...) {
    throw ConfigError("config: invalid integer for " + key + ": " + s);
  }
}

std::array<double, 3> parse_triple(const std::string& s, const std::string& key) {
  auto parts = split_csv(s);
  if (parts.size() != 3) throw ConfigError("config: expected 3 comma-separated values for " + key);
  return {parse_double(parts[0], key), parse_double(parts[1], key), parse_double(parts[2], key)};
}

}  // namespace

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: malformed line " + std::to_string(lineno) + ": " + t);
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    std::string sk = section + "." + key;

    if (sk == "data.root") cfg.data.root = val;
    else if (sk == "data.task") cfg.data.task = val;
    else if (sk == "label.horizon_t") cfg.label.horizon_t = parse_double(val, sk);
    else if (sk == "label.r_fraction") cfg.label.r_fraction = parse_double(val, sk);
    else if (sk == "label.boundary_policy") {
      if (val == "ccw-next") cfg.label.boundary_policy = BoundaryPolicy::ccw_next;
      else if (val == "error") cfg.label.boundary_policy = BoundaryPolicy::error;
      else throw ConfigError("config: unknown boundary_policy " + val);
    } else if (sk == "label.axis_convention") {
      if (val == "paper-verbatim") cfg.label.axis_convention = AxisConvention::paper_verbatim;
      else if (val == "screen-y-down") cfg.label.axis_convention = AxisConvention::screen_y_down;
      else throw ConfigError("config: unknown axis_convention " + val);
    } else if (sk == "model.kind") cfg.model.kind = val;
    else if (sk == "model.segments") cfg.model.segments = parse_int(val, sk);
    else if (sk == "model.input_size") cfg.model.input_size = parse_int(val, sk);
    else if (sk == "model.widths") {
      cfg.model.widths.clear();
      for (const auto& p : split_csv(val)) cfg.model.widths.push_back(parse_int(p, sk));
    } else if (sk == "model.feature_dim") cfg.model.feature_dim = parse_int(val, sk);
    else if (sk == "model.head_dim") cfg.model.head_dim = parse_int(val, sk);
    else if (sk == "model.expand_factor") cfg.model.expand_factor = parse_int(val, sk);
    else if (sk == "model.shift_fraction") cfg.model.shift_fraction = parse_double(val, sk);
    else if (sk == "model.reweight") cfg.model.reweight = parse_bool(val, sk);
    else if (sk == "model.stem_pool") cfg.model.stem_pool = parse_bool(val, sk);
    else if (sk == "model.norm_x_mean") cfg.model.norm_x_mean = parse_triple(val, sk);
    else if (sk == "model.norm_x_std") cfg.model.norm_x_std = parse_triple(val, sk);
    else if (sk == "model.norm_dx_mean") cfg.model.norm_dx_mean = parse_triple(val, sk);
    else if (sk == "model.norm_dx_std") cfg.model.norm_dx_std = parse_triple(val, sk);
    else if (sk == "losses.lambda_s") cfg.losses.lambda_s = parse_double(val, sk);
    else if (sk == "losses.lambda_m") cfg.losses.lambda_m = parse_double(val, sk);
    else if (sk == "losses.use_sc") cfg.losses.use_sc = parse_bool(val, sk);
    else if (sk == "losses.use_mc") cfg.losses.use_mc = parse_bool(val, sk);
    else if (sk == "losses.temperature") cfg.losses.temperature = parse_double(val, sk);
    else if (sk == "losses.num_centers") cfg.losses.num_centers = parse_int(val, sk);
    else if (sk == "losses.center_init_scale") cfg.losses.center_init_scale = parse_double(val, sk);
    else if (sk == "losses.include_positive_in_denominator")
      cfg.losses.include_positive_in_denominator = parse_bool(val, sk);
    else if (sk == "optim.lr_backbone") cfg.optim.lr_backbone = parse_double(val, sk);
    else if (sk == "optim.lr_head") cfg.optim.lr_head = parse_double(val, sk);
    else if (sk == "optim.lr_centers") cfg.optim.lr_centers = parse_double(val, sk);
    else if (sk == "optim.momentum") cfg.optim.momentum = parse_double(val, sk);
    else if (sk == "optim.clip_norm") cfg.optim.clip_norm = parse_double(val, sk);
    else if (sk == "optim.batch_size") cfg.optim.batch_size = parse_int(val, sk);
    else if (sk == "optim.epochs") cfg.optim.epochs = parse_int(val, sk);
    else if (sk == "optim.finetune_lr_scale") cfg.optim.finetune_lr_scale = parse_double(val, sk);
    else if (sk == "run.seed") cfg.run.seed = static_cast<std::uint64_t>(std::stoull(val));
    else if (sk == "run.run_dir") cfg.run.run_dir = val;
    else if (sk == "run.finetune_from") cfg.run.finetune_from = val;
    else if (sk == "run.resume") cfg.run.resume = parse_bool(val, sk);
    else throw ConfigError("config: unknown key " + sk);
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  out << "[data]\n";
  out << "root = " << cfg.data.root << "\n";
  out << "task = " << cfg.data.task << "\n";
  out << "\n[label]\n";
  out << "horizon_t = " << fmt_double(cfg.label.horizon_t) << "\n";
  out << "r_fraction = " << fmt_double(cfg.label.r_fraction) << "\n";
  out << "boundary_policy = "
      << (cfg.label.boundary_policy == BoundaryPolicy::ccw_next ? "ccw-next" : "error") << "\n";
  out << "axis_convention = "
      << (cfg.label.axis_convention == AxisConvention::paper_verbatim ? "paper-verbatim" : "screen-y-down")
      << "\n";
  out << "\n[model]\n";
  out << "kind = " << cfg.model.kind << "\n";
  out << "segments = " << cfg.model.segments << "\n";
  out << "input_size = " << cfg.model.input_size << "\n";
  out << "widths = " << fmt_ints(cfg.model.widths) << "\n";
  out << "feature_dim = " << cfg.model.feature_dim << "\n";
  out << "head_dim = " << cfg.model.head_dim << "\n";
  out << "expand_factor = " << cfg.model.expand_factor << "\n";
  out << "shift_fraction = " << fmt_double(cfg.model.shift_fraction) << "\n";
  out << "reweight = " << (cfg.model.reweight ? "true" : "false") << "\n";
  out << "stem_pool = " << (cfg.model.stem_pool ? "true" : "false") << "\n";
  out << "norm_x_mean = " << fmt_triple(cfg.model.norm_x_mean) << "\n";
  out << "norm_x_std = " << fmt_triple(cfg.model.norm_x_std) << "\n";
  out << "norm_dx_mean = " << fmt_triple(cfg.model.norm_dx_mean) << "\n";
  out << "norm_dx_std = " << fmt_triple(cfg.model.norm_dx_std) << "\n";
  out << "\n[losses]\n";
  out << "lambda_s = " << fmt_double(cfg.losses.lambda_s) << "\n";
  out << "lambda_m = " << fmt_double(cfg.losses.lambda_m) << "\n";
  out << "use_sc = " << (cfg.losses.use_sc ? "true" : "false") << "\n";
  out << "use_mc = " << (cfg.losses.use_mc ? "true" : "false") << "\n";
  out << "temperature = " << fmt_double(cfg.losses.temperature) << "\n";
  out << "num_centers = " << cfg.losses.num_centers << "\n";
  out << "center_init_scale = " << fmt_double(cfg.losses.center_init_scale) << "\n";
  out << "include_positive_in_denominator = "
      << (cfg.losses.include_positive_in_denominator ? "true" : "false") << "\n";
  out << "\n[optim]\n";
  out << "lr_backbone = " << fmt_double(cfg.optim.lr_backbone) << "\n";
  out << "lr_head = " << fmt_double(cfg.optim.lr_head) << "\n";
  out << "lr_centers = " << fmt_double(cfg.optim.lr_centers) << "\n";
  out << "momentum = " << fmt_double(cfg.optim.momentum) << "\n";
  out << "clip_norm = " << fmt_double(cfg.optim.clip_norm) << "\n";
  out << "batch_size = " << cfg.optim.batch_size << "\n";
  out << "epochs = " << cfg.optim.epochs << "\n";
  out << "finetune_lr_scale = " << fmt_double(cfg.optim.finetune_lr_scale) << "\n";
  out << "\n[run]\n";
  out << "seed = " << cfg.run.seed << "\n";
  out << "run_dir = " << cfg.run.run_dir << "\n";
  out << "finetune_from = " << cfg.run.finetune_from << "\n";
  out << "resume = " << (cfg.run.resume ? "true" : "false") << "\n";
  return out.str();
}

void save_config(const std::string& path, const Config& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("config: cannot write " + path);
  out << serialize_config(cfg);
}

void validate(const Config& cfg) {
  if (!(cfg.label.horizon_t > 0)) throw ConfigError("label.horizon_t must be > 0");
  if (!(cfg.label.r_fraction > 0 && cfg.label.r_fraction < 1))
    throw ConfigError("label.r_fraction must be in (0, 1)");
  if (cfg.model.kind != "dmsd" && cfg.model.kind != "single")
    throw ConfigError("model.kind must be dmsd or single");
  if (cfg.model.segments < 1) throw ConfigError("model.segments must be >= 1");
  if (cfg.model.input_size < 8) throw ConfigError("model.input_size must be >= 8");
  if (cfg.model.widths.empty()) throw ConfigError("model.widths must be non-empty");
  if (cfg.model.expand_factor < 1) throw ConfigError("model.expand_factor must be >= 1");
  if (!(cfg.model.shift_fraction >= 0 && cfg.model.shift_fraction <= 0.5))
    throw ConfigError("model.shift_fraction must be in [0, 0.5]");
  if (cfg.losses.lambda_s < 0 || cfg.losses.lambda_m < 0)
    throw ConfigError("loss weights must be non-negative");
  if (cfg.losses.num_centers < 1) throw ConfigError("losses.num_centers must be >= 1");
  if (!(cfg.losses.temperature > 0)) throw ConfigError("losses.temperature must be > 0");
  if (!(cfg.optim.lr_backbone > 0 && cfg.optim.lr_head > 0 && cfg.optim.lr_centers > 0))
    throw ConfigError("learning rates must be > 0");
  if (cfg.optim.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
  if (cfg.losses.use_sc && cfg.optim.batch_size < 4)
    throw ConfigError("optim.batch_size must be >= 4 when the scenario contrast loss is enabled");
  if (cfg.optim.epochs < 0) throw ConfigError("optim.epochs must be >= 0");
  if (cfg.data.task != "single" && cfg.data.task != "multiple" && cfg.data.task != "challenging")
    throw ConfigError("data.task must be single, multiple or challenging");
}

}  // namespace dmsd
