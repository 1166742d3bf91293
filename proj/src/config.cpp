#include "introprior/config.hpp"

#include "introprior/data2d.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace introprior {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw Error("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config: " + key + " expects true/false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define DOUBLE_FIELD(KEY, MEMBER)                                                                 \
  Field {                                                                                         \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); },           \
        [](const TrainConfig& c) { return fmt_double(c.MEMBER); }                                 \
  }
#define INT_FIELD(KEY, MEMBER)                                                                    \
  Field {                                                                                         \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = static_cast<int>(parse_int(KEY, v)); }, \
        [](const TrainConfig& c) { return std::to_string(c.MEMBER); }                             \
  }
#define BOOL_FIELD(KEY, MEMBER)                                                                   \
  Field {                                                                                         \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },             \
        [](const TrainConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"dataset",
            [](TrainConfig& c, const std::string& v) {
              check_dataset_name(v);
              c.dataset = v;
            },
            [](const TrainConfig& c) { return c.dataset; }},
      Field{"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      INT_FIELD("net.latent_dim", latent_dim),
      INT_FIELD("net.hidden", hidden),
      INT_FIELD("net.layers", layers),
      Field{"prior.kind",
            [](TrainConfig& c, const std::string& v) {
              if (v == "sg") c.prior_kind = PriorKind::sg;
              else if (v == "mog") c.prior_kind = PriorKind::mog;
              else if (v == "vamp-to-mog") c.prior_kind = PriorKind::vamp_to_mog;
              else throw Error("config: prior.kind must be sg, mog or vamp-to-mog, got '" + v + "'");
            },
            [](const TrainConfig& c) { return prior_kind_name(c.prior_kind); }},
      INT_FIELD("prior.modes", modes),
      BOOL_FIELD("prior.learnable_contributions", learnable_contributions),
      BOOL_FIELD("prior.intro_prior", intro_prior),
      DOUBLE_FIELD("hyper.alpha", hyper.alpha),
      DOUBLE_FIELD("hyper.gamma", hyper.gamma),
      DOUBLE_FIELD("hyper.gamma_rho", hyper.gamma_rho),
      DOUBLE_FIELD("hyper.beta_rec", hyper.beta_rec),
      DOUBLE_FIELD("hyper.beta_kl", hyper.beta_kl),
      DOUBLE_FIELD("hyper.beta_neg", hyper.beta_neg),
      DOUBLE_FIELD("hyper.r_entropy", hyper.r_entropy),
      DOUBLE_FIELD("hyper.exp_clamp", hyper.exp_clamp),
      INT_FIELD("mc.samples", T),
      Field{"mc.kl_mode",
            [](TrainConfig& c, const std::string& v) {
              if (v == "closed") c.kl_mode = KlMode::closed;
              else if (v == "mc") c.kl_mode = KlMode::mc;
              else throw Error("config: mc.kl_mode must be closed or mc, got '" + v + "'");
            },
            [](const TrainConfig& c) { return std::string(c.kl_mode == KlMode::closed ? "closed" : "mc"); }},
      BOOL_FIELD("fakes.include_reconstructions", fakes_include_reconstructions),
      INT_FIELD("train.warmup_epochs", warmup_epochs),
      INT_FIELD("train.adversarial_epochs", adversarial_epochs),
      INT_FIELD("train.steps_per_epoch", steps_per_epoch),
      INT_FIELD("train.batch_size", batch_size),
      INT_FIELD("train.fake_batch_size", fake_batch_size),
      INT_FIELD("train.eval_every", eval_every),
      DOUBLE_FIELD("lr.encoder", adam_encoder.lr),
      DOUBLE_FIELD("lr.decoder", adam_decoder.lr),
      DOUBLE_FIELD("lr.prior", adam_prior.lr),
      Field{"adam.beta1",
            [](TrainConfig& c, const std::string& v) {
              c.adam_encoder.beta1 = c.adam_decoder.beta1 = c.adam_prior.beta1 = parse_double("adam.beta1", v);
            },
            [](const TrainConfig& c) { return fmt_double(c.adam_encoder.beta1); }},
      Field{"adam.beta2",
            [](TrainConfig& c, const std::string& v) {
              c.adam_encoder.beta2 = c.adam_decoder.beta2 = c.adam_prior.beta2 = parse_double("adam.beta2", v);
            },
            [](const TrainConfig& c) { return fmt_double(c.adam_encoder.beta2); }},
      Field{"adam.eps",
            [](TrainConfig& c, const std::string& v) {
              c.adam_encoder.eps = c.adam_decoder.eps = c.adam_prior.eps = parse_double("adam.eps", v);
            },
            [](const TrainConfig& c) { return fmt_double(c.adam_encoder.eps); }},
      BOOL_FIELD("clip.enabled", clip_enabled),
      DOUBLE_FIELD("clip.rho", clip_rho),
      Field{"clip.K",
            [](TrainConfig& c, const std::string& v) {
              if (v == "auto") c.clip_K.reset();
              else c.clip_K = parse_double("clip.K", v);
            },
            [](const TrainConfig& c) { return c.clip_K ? fmt_double(*c.clip_K) : std::string("auto"); }},
      INT_FIELD("eval.grid", eval.grid),
      INT_FIELD("eval.T", eval.T),
      INT_FIELD("eval.hist_bins", eval.hist_bins),
      INT_FIELD("eval.hist_samples", eval.hist_samples),
      INT_FIELD("eval.heldout", eval.heldout),
      DOUBLE_FIELD("eval.hist_eps", eval.hist_eps),
      DOUBLE_FIELD("eval.scale_gnelbo", eval.scale_gnelbo),
      DOUBLE_FIELD("eval.scale_kl", eval.scale_kl),
      DOUBLE_FIELD("eval.scale_jsd", eval.scale_jsd),
  };
  return table;
}

#undef DOUBLE_FIELD
#undef INT_FIELD
#undef BOOL_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw Error("config: unknown key '" + key + "'");
}

}  // namespace

std::string prior_kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::sg: return "sg";
    case PriorKind::mog: return "mog";
    case PriorKind::vamp_to_mog: return "vamp-to-mog";
  }
  return "?";
}

void TrainConfig::validate() const {
  check_dataset_name(dataset);
  require(latent_dim >= 1 && hidden >= 1 && layers >= 0, "config: bad network shape");
  require(modes >= 1, "config: prior.modes must be >= 1");
  hyper.validate();
  require(T >= 1, "config: mc.samples must be >= 1");
  require(warmup_epochs >= 0 && adversarial_epochs >= 0, "config: epoch counts must be >= 0");
  require(steps_per_epoch >= 1 && batch_size >= 1 && fake_batch_size >= 0 && eval_every >= 0,
          "config: counts must be >= 1");
  require(adam_encoder.lr >= 0 && adam_decoder.lr >= 0 && adam_prior.lr >= 0, "config: learning rates must be >= 0");
  require(clip_rho > 0 && clip_rho < 1, "config: clip.rho must lie in (0, 1)");
  require(!clip_K || *clip_K > 0, "config: clip.K must be positive");
  require(eval.grid >= 50 && eval.T >= 1 && eval.hist_bins >= 1 && eval.hist_samples >= 1 && eval.heldout >= 1,
          "config: bad eval settings");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(*this) << "\n";
  return os.str();
}

ObjectiveOptions TrainConfig::objective_options() const {
  ObjectiveOptions o;
  o.kl_mode = kl_mode;
  o.draws = T;
  o.fakes_include_reconstructions = fakes_include_reconstructions;
  return o;
}

namespace {

struct KeyValueLine {
  int lineno;
  std::string key, value;
};

std::vector<KeyValueLine> split_lines(const std::string& text, const std::string& origin) {
  std::vector<KeyValueLine> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    out.push_back({lineno, key, value});
  }
  return out;
}

TrainConfig apply_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  for (const auto& kv : split_lines(text, origin)) {
    try {
      set_config_value(cfg, kv.key, kv.value);
    } catch (const Error& e) {
      throw Error(origin + ":" + std::to_string(kv.lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& kv : split_lines(text, origin)) out.emplace_back(std::move(kv.key), std::move(kv.value));
  return out;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string get_config_value(const TrainConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

TrainConfig parse_config(const std::string& text) { return apply_text(text, "config"); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TrainConfig load_config(const std::string& path) { return apply_text(read_text_file(path), path); }

}  // namespace introprior
