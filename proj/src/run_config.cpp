#include "hkd/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace hkd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <typename T>
std::string fmt(T v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  } else {
    return std::to_string(v);
  }
}

template <typename Range>
std::string fmt_list(const Range& r) {
  std::string s;
  for (const auto& v : r) s += (s.empty() ? "" : ",") + fmt(v);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Field scalar(std::string key, Access access) {
  return {key,
          [key, access](RunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              access(c) = parse_bool(key, v);
            } else {
              access(c) = parse_number<T>(key, v);
            }
          },
          [access](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); }};
}

template <typename T, std::size_t N, typename Access>
Field fixed_list(std::string key, Access access) {
  return {key,
          [key, access](RunConfig& c, const std::string& v) {
            auto items = parse_list<T>(key, v);
            if (items.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " values");
            std::copy(items.begin(), items.end(), access(c).begin());
          },
          [access](const RunConfig& c) { return fmt_list(access(const_cast<RunConfig&>(c))); }};
}

template <typename T, typename Access>
Field var_list(std::string key, Access access) {
  return {key, [key, access](RunConfig& c, const std::string& v) { access(c) = parse_list<T>(key, v); },
          [access](const RunConfig& c) { return fmt_list(access(const_cast<RunConfig&>(c))); }};
}

void add_net_fields(std::vector<Field>& f, const std::string& prefix, NetConfig RunConfig::*net) {
  f.push_back(fixed_list<int, 4>(prefix + ".widths", [net](RunConfig& c) -> auto& { return (c.*net).widths; }));
  f.push_back(fixed_list<int, 4>(prefix + ".blocks", [net](RunConfig& c) -> auto& { return (c.*net).blocks; }));
  f.push_back(scalar<int>(prefix + ".pyramid_width", [net](RunConfig& c) -> auto& { return (c.*net).pyramid_width; }));
  f.push_back(scalar<int>(prefix + ".head_hidden", [net](RunConfig& c) -> auto& { return (c.*net).head_hidden; }));
  f.push_back(scalar<int>(prefix + ".logit_width", [net](RunConfig& c) -> auto& { return (c.*net).logit_width; }));
  f.push_back(scalar<bool>(prefix + ".pyramid_roi_align", [net](RunConfig& c) -> auto& { return (c.*net).pyramid_roi_align; }));
  f.push_back(scalar<int>(prefix + ".roi_size", [net](RunConfig& c) -> auto& { return (c.*net).roi.output_size; }));
  f.push_back(scalar<int>(prefix + ".roi_samples", [net](RunConfig& c) -> auto& { return (c.*net).roi.samples; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(scalar<std::size_t>("dataset.train_count", [](RunConfig& c) -> auto& { return c.dataset.train_count; }));
    f.push_back(scalar<std::size_t>("dataset.test_count", [](RunConfig& c) -> auto& { return c.dataset.test_count; }));
    f.push_back(scalar<std::size_t>("dataset.height", [](RunConfig& c) -> auto& { return c.dataset.height; }));
    f.push_back(scalar<std::size_t>("dataset.width", [](RunConfig& c) -> auto& { return c.dataset.width; }));
    f.push_back(scalar<int>("dataset.min_figures", [](RunConfig& c) -> auto& { return c.dataset.min_figures; }));
    f.push_back(scalar<int>("dataset.max_figures", [](RunConfig& c) -> auto& { return c.dataset.max_figures; }));
    f.push_back(scalar<double>("dataset.occlusion_rate", [](RunConfig& c) -> auto& { return c.dataset.occlusion_rate; }));
    f.push_back(scalar<double>("dataset.min_figure_height", [](RunConfig& c) -> auto& { return c.dataset.min_figure_height; }));
    f.push_back(scalar<double>("dataset.max_figure_height", [](RunConfig& c) -> auto& { return c.dataset.max_figure_height; }));
    f.push_back(scalar<double>("dataset.small_band_fraction", [](RunConfig& c) -> auto& { return c.dataset.small_band_fraction; }));
    f.push_back(scalar<int>("dataset.max_distractors", [](RunConfig& c) -> auto& { return c.dataset.max_distractors; }));
    f.push_back(scalar<std::uint64_t>("dataset.seed", [](RunConfig& c) -> auto& { return c.dataset.seed; }));
    add_net_fields(f, "teacher", &RunConfig::teacher);
    add_net_fields(f, "student", &RunConfig::student);
    f.push_back(scalar<int>("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    f.push_back(scalar<double>("train.base_lr", [](RunConfig& c) -> auto& { return c.train.base_lr; }));
    f.push_back(var_list<int>("train.lr_decay_epochs", [](RunConfig& c) -> auto& { return c.train.lr_decay_epochs; }));
    f.push_back(scalar<double>("train.lr_decay_factor", [](RunConfig& c) -> auto& { return c.train.lr_decay_factor; }));
    f.push_back(scalar<double>("train.flip_prob", [](RunConfig& c) -> auto& { return c.train.flip_prob; }));
    f.push_back(scalar<double>("train.momentum", [](RunConfig& c) -> auto& { return c.train.momentum; }));
    f.push_back(scalar<double>("train.max_grad_norm", [](RunConfig& c) -> auto& { return c.train.max_grad_norm; }));
    f.push_back(scalar<std::size_t>("train.warmup_steps", [](RunConfig& c) -> auto& { return c.train.warmup_steps; }));
    f.push_back(scalar<double>("train.warmup_factor", [](RunConfig& c) -> auto& { return c.train.warmup_factor; }));
    f.push_back(scalar<std::uint64_t>("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    f.push_back(scalar<std::size_t>("train.rpn_batch", [](RunConfig& c) -> auto& { return c.train.rpn_sampling.batch; }));
    f.push_back(scalar<std::size_t>("train.roi_batch", [](RunConfig& c) -> auto& { return c.train.roi_sampling.batch; }));
    f.push_back(scalar<double>("train.roi_positive_fraction", [](RunConfig& c) -> auto& { return c.train.roi_sampling.positive_fraction; }));
    f.push_back(scalar<std::size_t>("train.proposals", [](RunConfig& c) -> auto& { return c.train.proposals.post_nms_top_k; }));
    f.push_back(scalar<double>("distill.lambda_pd", [](RunConfig& c) -> auto& { return c.train.distill.lambda_pd; }));
    f.push_back(scalar<double>("distill.lambda_rd", [](RunConfig& c) -> auto& { return c.train.distill.lambda_rd; }));
    f.push_back(scalar<double>("distill.lambda_ld", [](RunConfig& c) -> auto& { return c.train.distill.lambda_ld; }));
    f.push_back(scalar<bool>("distill.pd", [](RunConfig& c) -> auto& { return c.train.distill.pd; }));
    f.push_back(scalar<bool>("distill.rd", [](RunConfig& c) -> auto& { return c.train.distill.rd; }));
    f.push_back(scalar<bool>("distill.ld", [](RunConfig& c) -> auto& { return c.train.distill.ld; }));
    f.push_back(scalar<bool>("distill.pyramid_roi_align", [](RunConfig& c) -> auto& { return c.train.distill.pyramid_roi_align; }));
    f.push_back(scalar<double>("eval.iou", [](RunConfig& c) -> auto& { return c.eval.iou; }));
    f.push_back(scalar<double>("eval.height_scale", [](RunConfig& c) -> auto& { return c.eval.height_scale; }));
    f.push_back(scalar<double>("eval.nms_iou", [](RunConfig& c) -> auto& { return c.eval.detect.nms_iou; }));
    f.push_back(scalar<std::size_t>("eval.max_detections", [](RunConfig& c) -> auto& { return c.eval.detect.max_detections; }));
    f.push_back(var_list<std::uint64_t>("ablate.seeds", [](RunConfig& c) -> auto& { return c.ablate_seeds; }));
    f.push_back(var_list<int>("ablate.rows", [](RunConfig& c) -> auto& { return c.ablate_rows; }));
    f.push_back({"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir.string(); }});
    return f;
  }();
  return table;
}

}  // namespace

TrainConfig desk_train_config() {
  TrainConfig c;
  c.distill.lambda_pd = 0.05;
  c.distill.lambda_rd = 0.3;
  c.distill.lambda_ld = 0.3;
  return c;
}

void RunConfig::validate() const {
  try {
    dataset.validate();
    teacher.validate();
    student.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (teacher.role != Role::teacher || student.role != Role::student) throw ConfigError("network roles are fixed");
  if (teacher.pyramid_width != student.pyramid_width) {
    throw ConfigError("teacher.pyramid_width and student.pyramid_width must match for pyramid distillation");
  }
  if (teacher.logit_width != student.logit_width) throw ConfigError("teacher and student logit widths must match");
  if (eval.iou <= 0 || eval.iou > 1) throw ConfigError("eval.iou must lie in (0,1]");
  if (eval.height_scale <= 0) throw ConfigError("eval.height_scale must be positive");
  if (ablate_seeds.empty()) throw ConfigError("ablate.seeds must list at least one seed");
  for (int r : ablate_rows) {
    if (r < 1 || r > 8) throw ConfigError("ablate.rows entries must lie in 1..8");
  }
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

std::string write_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace hkd
