#include "changer/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "changer/dataset_io.hpp"

namespace changer {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    const auto integer = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_number<int>(k, v);
      };
    };
    const auto real = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_number<double>(k, v);
      };
    };
    const auto flag = [](auto member) {
      return [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); };
    };

    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    t["out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };
    t["variant"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.apply_variant(wrap(k, [&] { return parse_variant(v); }));
    };
    t["fusion"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.model.fusion = wrap(k, [&] { return parse_fusion(v); });
    };
    t["decoder_dim"] = integer([](RunConfig& c) -> int& { return c.model.decoder_dim; });
    t["ad_ratio"] = integer([](RunConfig& c) -> int& { return c.model.ad_ratio; });
    for (int i = 0; i < 4; ++i) {
      const std::string p = "stage" + std::to_string(i + 1) + ".";
      t[p + "channels"] = integer([i](RunConfig& c) -> int& { return c.model.stages[i].out_channels; });
      t[p + "blocks"] = integer([i](RunConfig& c) -> int& { return c.model.stages[i].blocks; });
      t[p + "period"] = integer([i](RunConfig& c) -> int& { return c.model.stages[i].interact.period; });
      t[p + "window"] = integer([i](RunConfig& c) -> int& { return c.model.stages[i].interact.window; });
      t[p + "interact"] = [i](RunConfig& c, const std::string& k, const std::string& v) {
        c.model.stages[i].interact.kind = wrap(k, [&] { return parse_interact(v); });
      };
    }

    t["lr"] = real([](RunConfig& c) -> double& { return c.train.lr; });
    t["weight_decay"] = real([](RunConfig& c) -> double& { return c.train.weight_decay; });
    t["max_iters"] = integer([](RunConfig& c) -> int& { return c.train.max_iters; });
    t["batch_size"] = integer([](RunConfig& c) -> int& { return c.train.batch_size; });
    t["poly_power"] = real([](RunConfig& c) -> double& { return c.train.poly_power; });
    t["beta1"] = real([](RunConfig& c) -> double& { return c.train.beta1; });
    t["beta2"] = real([](RunConfig& c) -> double& { return c.train.beta2; });
    t["adam_eps"] = real([](RunConfig& c) -> double& { return c.train.adam_eps; });
    t["eval_every"] = integer([](RunConfig& c) -> int& { return c.train.eval_every; });
    t["overfit"] = flag([](RunConfig& c) -> bool& { return c.train.overfit; });
    t["aug.flip"] = flag([](RunConfig& c) -> bool& { return c.train.aug.flip; });
    t["aug.crop"] = flag([](RunConfig& c) -> bool& { return c.train.aug.crop; });
    t["aug.crop_size"] = integer([](RunConfig& c) -> int& { return c.train.aug.crop_size; });
    t["aug.photometric"] = flag([](RunConfig& c) -> bool& { return c.train.aug.photometric; });
    t["aug.swap"] = flag([](RunConfig& c) -> bool& { return c.train.aug.temporal_swap; });

    t["data.source"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v == "synthetic") {
        c.data.source = DataSource::Synthetic;
      } else if (v == "dir") {
        c.data.source = DataSource::Directory;
      } else {
        throw ConfigError("config key '" + k + "': expected synthetic or dir, got '" + v + "'");
      }
    };
    t["data.dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data.dir = v; };
    t["data.eval_dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data.eval_dir = v; };
    t["data.train_samples"] = integer([](RunConfig& c) -> int& { return c.data.train_samples; });
    t["data.eval_samples"] = integer([](RunConfig& c) -> int& { return c.data.eval_samples; });
    t["data.size"] = integer([](RunConfig& c) -> int& { return c.data.size; });
    t["data.difficulty"] = real([](RunConfig& c) -> double& { return c.data.difficulty; });
    return t;
  }();
  return table;
}

} // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  it->second(config, key, value);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  apply_setting(config, trim(std::string_view(assignment).substr(0, eq)),
                trim(std::string_view(assignment).substr(eq + 1)));
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(base, trim(std::string_view(content).substr(0, eq)),
                  trim(std::string_view(content).substr(eq + 1)));
  }
  return base;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize(const RunConfig& c) {
  std::ostringstream o;
  const auto& m = c.model;
  // variant first: applying it resets the keys that follow
  o << "variant = " << to_string(m.variant) << '\n';
  o << "fusion = " << to_string(m.fusion) << '\n';
  o << "decoder_dim = " << m.decoder_dim << '\n';
  o << "ad_ratio = " << m.ad_ratio << '\n';
  for (int i = 0; i < 4; ++i) {
    const StageSpec& s = m.stages[static_cast<std::size_t>(i)];
    const std::string p = "stage" + std::to_string(i + 1) + ".";
    o << p << "channels = " << s.out_channels << '\n';
    o << p << "blocks = " << s.blocks << '\n';
    o << p << "interact = " << to_string(s.interact.kind) << '\n';
    o << p << "period = " << s.interact.period << '\n';
    o << p << "window = " << s.interact.window << '\n';
  }
  const auto& t = c.train;
  o << "lr = " << fmt_double(t.lr) << '\n';
  o << "weight_decay = " << fmt_double(t.weight_decay) << '\n';
  o << "max_iters = " << t.max_iters << '\n';
  o << "batch_size = " << t.batch_size << '\n';
  o << "poly_power = " << fmt_double(t.poly_power) << '\n';
  o << "beta1 = " << fmt_double(t.beta1) << '\n';
  o << "beta2 = " << fmt_double(t.beta2) << '\n';
  o << "adam_eps = " << fmt_double(t.adam_eps) << '\n';
  o << "eval_every = " << t.eval_every << '\n';
  o << "overfit = " << fmt_bool(t.overfit) << '\n';
  o << "aug.flip = " << fmt_bool(t.aug.flip) << '\n';
  o << "aug.crop = " << fmt_bool(t.aug.crop) << '\n';
  o << "aug.crop_size = " << t.aug.crop_size << '\n';
  o << "aug.photometric = " << fmt_bool(t.aug.photometric) << '\n';
  o << "aug.swap = " << fmt_bool(t.aug.temporal_swap) << '\n';
  const auto& d = c.data;
  o << "data.source = " << (d.source == DataSource::Synthetic ? "synthetic" : "dir") << '\n';
  o << "data.dir = " << d.dir << '\n';
  o << "data.eval_dir = " << d.eval_dir << '\n';
  o << "data.train_samples = " << d.train_samples << '\n';
  o << "data.eval_samples = " << d.eval_samples << '\n';
  o << "data.size = " << d.size << '\n';
  o << "data.difficulty = " << fmt_double(d.difficulty) << '\n';
  o << "seed = " << c.seed << '\n';
  o << "out = " << c.out << '\n';
  return o.str();
}

Datasets make_datasets(const RunConfig& c, bool with_train) {
  Datasets d;
  if (c.data.source == DataSource::Synthetic) {
    if (with_train) d.train = synth_generate(c.seed, c.data.train_samples, c.data.size, c.data.difficulty);
    // disjoint id range keeps the eval split out of the training stream
    d.eval = synth_generate(c.seed, c.data.eval_samples, c.data.size, c.data.difficulty, 1'000'000);
  } else {
    if (c.data.dir.empty()) throw ConfigError("data.source = dir requires data.dir");
    if (with_train) d.train = load_png_dataset(c.data.dir);
    d.eval = load_png_dataset(c.data.eval_dir.empty() ? c.data.dir : c.data.eval_dir);
  }
  return d;
}

} // namespace changer
