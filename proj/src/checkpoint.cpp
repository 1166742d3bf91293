#include "introprior/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#ifndef INTROPRIOR_VERSION
#define INTROPRIOR_VERSION "dev"
#endif

namespace introprior {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string code_version() { return INTROPRIOR_VERSION; }

void write_array(const std::filesystem::path& file, const Mat& a, int rank) {
  require(rank == 1 || rank == 2, "write_array: rank must be 1 or 2");
  require(rank == 2 || a.cols() == 1 || a.size() == 0, "write_array: rank-1 array must be a column");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out.write(kArrayMagic, 8);
  const std::uint32_t r = static_cast<std::uint32_t>(rank);
  out.write(reinterpret_cast<const char*>(&r), 4);
  const std::uint64_t rows = static_cast<std::uint64_t>(a.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(a.cols());
  out.write(reinterpret_cast<const char*>(&rows), 8);
  if (rank == 2) out.write(reinterpret_cast<const char*>(&cols), 8);
  std::vector<float> buf(static_cast<size_t>(a.size()));
  size_t k = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) buf[k++] = static_cast<float>(a(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error("write failed: " + file.string());
}

Mat read_array(const std::filesystem::path& file, const std::string& name, int* rank_out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("checkpoint array '" + name + "': cannot open " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kArrayMagic, 8) != 0) throw Error("checkpoint array '" + name + "': bad magic");
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 4);
  if (!in || (rank != 1 && rank != 2))
    throw Error("checkpoint array '" + name + "': bad header (rank " + std::to_string(rank) + ")");
  std::uint64_t dims[2] = {0, 1};
  for (std::uint32_t k = 0; k < rank; ++k) {
    in.read(reinterpret_cast<char*>(&dims[k]), 8);
    if (!in) throw Error("checkpoint array '" + name + "': truncated header");
  }
  if (dims[0] > (1ull << 32) || dims[1] > (1ull << 32))
    throw Error("checkpoint array '" + name + "': implausible dimensions");
  std::vector<float> buf(static_cast<size_t>(dims[0] * dims[1]));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != buf.size() * sizeof(float))
    throw Error("checkpoint array '" + name + "': truncated data");
  in.peek();
  if (!in.eof()) throw Error("checkpoint array '" + name + "': trailing bytes");
  Mat a(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
  size_t k = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = buf[k++];
  if (rank_out) *rank_out = static_cast<int>(rank);
  return a;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Manifest {
  std::map<std::string, std::string> kv;
  const std::string& at(const std::string& k) const {
    auto it = kv.find(k);
    if (it == kv.end()) throw Error("checkpoint manifest: missing key '" + k + "'");
    return it->second;
  }
};

void save_refs(const std::filesystem::path& dir, const std::vector<ParamRef>& refs, const std::string& prefix,
               std::ostringstream& manifest) {
  for (const auto& r : refs) {
    const std::string name = prefix + r.name;
    write_array(dir / (name + ".bin"), Mat(r.map()));
    manifest << "array." << name << " = " << r.rows << "," << r.cols << "\n";
  }
}

void load_refs(const std::filesystem::path& dir, const std::vector<ParamRef>& refs, const std::string& prefix) {
  for (const auto& r : refs) {
    const std::string name = prefix + r.name;
    const Mat a = read_array(dir / (name + ".bin"), name);
    if (a.rows() != r.rows || a.cols() != r.cols)
      throw Error("checkpoint array '" + name + "': shape " + std::to_string(a.rows()) + "x" +
                  std::to_string(a.cols()) + " does not match the configured " + std::to_string(r.rows) + "x" +
                  std::to_string(r.cols));
    r.map() = a;
  }
}

Vec read_vec(const std::filesystem::path& dir, const std::string& name) {
  const Mat a = read_array(dir / (name + ".bin"), name);
  require(a.cols() == 1 || a.size() == 0, "checkpoint array '" + name + "': expected a vector");
  return a.size() == 0 ? Vec() : Vec(a.col(0));
}

bool parse_flag(const std::string& v) { return v == "true"; }

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt", std::ios::binary);
  if (!in) throw Error("checkpoint: missing manifest.txt in " + dir.string());
  std::ostringstream os;
  os << in.rdbuf();
  Manifest m;
  for (auto& [k, v] : parse_key_values(os.str(), (dir / "manifest.txt").string())) m.kv[k] = v;
  return m;
}

TrainConfig manifest_config(const Manifest& m) {
  TrainConfig cfg;
  for (const auto& [k, v] : m.kv)
    if (k.rfind("config.", 0) == 0) set_config_value(cfg, k.substr(7), v);
  cfg.validate();
  return cfg;
}

void load_prior(const std::filesystem::path& dir, const Manifest& m, MixturePrior& p) {
  p.means = read_array(dir / "prior.means.bin", "prior.means");
  p.raw_log_vars = read_array(dir / "prior.raw_log_vars.bin", "prior.raw_log_vars");
  p.energy_logits = read_vec(dir, "prior.energy_logits");
  p.clip_lo = read_vec(dir, "prior.clip_lo");
  p.clip_hi = read_vec(dir, "prior.clip_hi");
  p.clip_K = std::stod(m.at("prior.clip_K"));
  p.learnable_contributions = parse_flag(m.at("prior.learnable_contributions"));
  p.learnable_params = parse_flag(m.at("prior.learnable_params"));
  p.clipping_enabled = parse_flag(m.at("prior.clipping_enabled"));
  p.validate();
}

}  // namespace

void save_checkpoint(const TrainState& cs, const std::filesystem::path& dir) {
  TrainState& s = const_cast<TrainState&>(cs);  // ParamRef needs mutable storage; nothing is written
  std::filesystem::create_directories(dir);
  std::ostringstream mf;
  mf << "format = 1\n";
  mf << "code_version = " << code_version() << "\n";
  mf << "epoch = " << s.epoch << "\n";
  mf << "phase = " << phase_name(s.phase) << "\n";
  mf << "rng.data = " << engine_to_string(s.data_rng) << "\n";
  mf << "rng.noise = " << engine_to_string(s.noise_rng) << "\n";
  mf << "opt.encoder.steps = " << s.opt_enc.steps() << "\n";
  mf << "opt.decoder.steps = " << s.opt_dec.steps() << "\n";
  mf << "opt.prior.steps = " << s.opt_prior.steps() << "\n";
  mf << "opt.vamp.steps = " << s.opt_vamp.steps() << "\n";
  const MixturePrior& p = s.model.prior;
  mf << "prior.clip_K = " << fmt(p.clip_K) << "\n";
  mf << "prior.learnable_contributions = " << (p.learnable_contributions ? "true" : "false") << "\n";
  mf << "prior.learnable_params = " << (p.learnable_params ? "true" : "false") << "\n";
  mf << "prior.clipping_enabled = " << (p.clipping_enabled ? "true" : "false") << "\n";

  save_refs(dir, s.model.enc.params(), "", mf);
  save_refs(dir, s.model.dec.params(), "", mf);
  save_refs(dir, s.prior_params(), "", mf);
  write_array(dir / "prior.clip_lo.bin", Mat(p.clip_lo), 1);
  write_array(dir / "prior.clip_hi.bin", Mat(p.clip_hi), 1);
  mf << "array.prior.clip_lo = " << p.clip_lo.size() << "\n";
  mf << "array.prior.clip_hi = " << p.clip_hi.size() << "\n";
  save_refs(dir, s.opt_enc.state(), "opt.", mf);
  save_refs(dir, s.opt_dec.state(), "opt.", mf);
  save_refs(dir, s.opt_prior.state(), "opt.", mf);
  if (s.vamp_active()) {
    save_refs(dir, s.vamp_params(), "", mf);
    save_refs(dir, s.opt_vamp.state(), "opt.", mf);
  }

  std::istringstream cfg_lines(s.cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) mf << "config." << line << "\n";

  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary);
    out << metrics_csv(s.history);
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / "manifest.txt").string());
  out << mf.str();
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  const TrainConfig cfg = manifest_config(m);
  TrainState s = init_state(cfg);
  s.epoch = std::stoi(m.at("epoch"));
  s.phase = parse_phase(m.at("phase"));
  s.data_rng = engine_from_string(m.at("rng.data"));
  s.noise_rng = engine_from_string(m.at("rng.noise"));

  load_refs(dir, s.model.enc.params(), "");
  load_refs(dir, s.model.dec.params(), "");
  load_prior(dir, m, s.model.prior);

  s.opt_prior = Adam(s.prior_params(), cfg.adam_prior);
  load_refs(dir, s.opt_enc.state(), "opt.");
  load_refs(dir, s.opt_dec.state(), "opt.");
  load_refs(dir, s.opt_prior.state(), "opt.");
  s.opt_enc.set_steps(std::stol(m.at("opt.encoder.steps")));
  s.opt_dec.set_steps(std::stol(m.at("opt.decoder.steps")));
  s.opt_prior.set_steps(std::stol(m.at("opt.prior.steps")));
  if (s.vamp_active()) {
    load_refs(dir, s.vamp_params(), "");
    load_refs(dir, s.opt_vamp.state(), "opt.");
    s.opt_vamp.set_steps(std::stol(m.at("opt.vamp.steps")));
  } else {
    s.vamp = VampPseudoInputs{};
    s.opt_vamp = Adam();
  }

  std::ifstream in(dir / "metrics.csv", std::ios::binary);
  if (!in) throw Error("checkpoint: missing metrics.csv in " + dir.string());
  std::ostringstream os;
  os << in.rdbuf();
  s.history = parse_metrics_csv(os.str());
  return s;
}

LoadedModel load_model(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  LoadedModel out;
  out.cfg = manifest_config(m);
  out.epoch = std::stoi(m.at("epoch"));
  Engine init = make_engine(out.cfg.seed, Stream::init);
  out.model.enc = Encoder(2, out.cfg.latent_dim, out.cfg.hidden, out.cfg.layers, init);
  out.model.dec = Decoder(out.cfg.latent_dim, 2, out.cfg.hidden, out.cfg.layers, init);
  out.model.kl_mode = out.cfg.kl_mode;
  load_refs(dir, out.model.enc.params(), "");
  load_refs(dir, out.model.dec.params(), "");
  load_prior(dir, m, out.model.prior);
  return out;
}

}  // namespace introprior
