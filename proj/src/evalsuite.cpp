#include "introprior/evalsuite.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace introprior {

namespace {

constexpr int kChunk = 4096;

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "gnelbo=" << gnelbo << "\n";
  os << "hist_kl=" << hist_kl << "\n";
  os << "hist_jsd=" << hist_jsd << "\n";
  os << "resp_entropy_norm=" << resp_entropy_norm << "\n";
  os << "resp_applicable=" << (resp_applicable ? 1 : 0) << "\n";
  os << "ce_diag=" << ce_diag << "\n";
  os << "scaled_gnelbo=" << gnelbo * scale_gnelbo << "\n";
  os << "scaled_hist_kl=" << hist_kl * scale_kl << "\n";
  os << "scaled_hist_jsd=" << hist_jsd * scale_jsd << "\n";
  os << "grid=" << grid << "\n";
  os << "hist_bins=" << hist_bins << "\n";
  os << "hist_samples=" << hist_samples << "\n";
  os << "heldout=" << heldout << "\n";
  return os.str();
}

EvalReport EvalReport::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    require(it != kv.end(), std::string("eval report: missing key ") + k);
    return std::stod(it->second);
  };
  EvalReport r;
  r.gnelbo = get("gnelbo");
  r.hist_kl = get("hist_kl");
  r.hist_jsd = get("hist_jsd");
  r.resp_entropy_norm = get("resp_entropy_norm");
  r.resp_applicable = get("resp_applicable") != 0.0;
  r.ce_diag = get("ce_diag");
  r.grid = static_cast<int>(get("grid"));
  r.hist_bins = static_cast<int>(get("hist_bins"));
  r.hist_samples = static_cast<int>(get("hist_samples"));
  r.heldout = static_cast<int>(get("heldout"));
  if (r.gnelbo != 0.0) r.scale_gnelbo = get("scaled_gnelbo") / r.gnelbo;
  if (r.hist_kl != 0.0) r.scale_kl = get("scaled_hist_kl") / r.hist_kl;
  if (r.hist_jsd != 0.0) r.scale_jsd = get("scaled_hist_jsd") / r.hist_jsd;
  return r;
}

Vec model_elbo(const Model& m, const Mat& x, int T, Engine& eng) {
  require(T >= 1, "model_elbo: T must be >= 1");
  const MixtureDensity p = m.density();
  const int n = static_cast<int>(x.rows());
  const int d = m.enc.latent_dim();
  Vec w(n);
  for (int start = 0; start < n; start += kChunk) {
    const int len = std::min(kChunk, n - start);
    const Mat xc = x.middleRows(start, len);
    const PosteriorBatch q = m.enc.encode(xc);
    const NoiseBlock noise = normal_block(eng, len, T, d);
    Mat z(static_cast<Eigen::Index>(len) * T, d);
    for (int s = 0; s < len; ++s) {
      const auto eps = noise.sample(s);
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j)
          z(static_cast<Eigen::Index>(s) * T + t, j) = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * eps[t * d + j];
    }
    const Mat xhat = m.dec.decode(z);
    Vec kl;
    if (p.modes() == 1) {
      kl = kl_closed_batch(q, p, BatchKlOptions{}).kl;
    } else {
      kl = kl_mc_batch(q, p, noise, BatchKlOptions{}).kl;
    }
    for (int s = 0; s < len; ++s) {
      double rec = 0.0;
      for (int t = 0; t < T; ++t) rec += 0.5 * (xhat.row(static_cast<Eigen::Index>(s) * T + t) - xc.row(s)).squaredNorm();
      w[start + s] = -(rec / T + kl[s]);
    }
  }
  return w;
}

Mat grid_points(const Box& box, int grid) {
  require(grid >= 1, "grid_points: grid must be >= 1");
  const double dx = (box.hi_x - box.lo_x) / grid;
  const double dy = (box.hi_y - box.lo_y) / grid;
  Mat pts(static_cast<Eigen::Index>(grid) * grid, 2);
  for (int iy = 0; iy < grid; ++iy)
    for (int ix = 0; ix < grid; ++ix) {
      pts(iy * grid + ix, 0) = box.lo_x + (ix + 0.5) * dx;
      pts(iy * grid + ix, 1) = box.lo_y + (iy + 0.5) * dy;
    }
  return pts;
}

double grid_normalized_elbo(const ElboFn& elbo, const Box& box, int grid, const Mat& heldout) {
  require(grid >= 50, "grid_normalized_elbo: grid must be at least 50 x 50");
  require(heldout.rows() >= 1 && heldout.cols() == 2, "grid_normalized_elbo: need held-out 2D samples");
  const Mat pts = grid_points(box, grid);
  const Vec w = elbo(pts);
  require(w.size() == pts.rows(), "grid_normalized_elbo: ELBO function returned wrong length");
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < w.size(); ++k) {
    require(!std::isnan(w[k]), "grid_normalized_elbo: NaN ELBO on grid");
    mx = std::max(mx, w[k]);
  }
  require(std::isfinite(mx), "grid_normalized_elbo: ELBO is -inf on the whole grid");
  const double cell = box.area() / (static_cast<double>(grid) * grid);
  const double log_z = mx + std::log((w.array() - mx).exp().sum() * cell);
  const double dx = (box.hi_x - box.lo_x) / grid;
  const double dy = (box.hi_y - box.lo_y) / grid;
  double acc = 0.0;
  for (int s = 0; s < heldout.rows(); ++s) {
    const int ix = std::clamp(static_cast<int>(std::floor((heldout(s, 0) - box.lo_x) / dx)), 0, grid - 1);
    const int iy = std::clamp(static_cast<int>(std::floor((heldout(s, 1) - box.lo_y) / dy)), 0, grid - 1);
    acc += w[iy * grid + ix] - log_z;
  }
  return -acc / static_cast<double>(heldout.rows());
}

namespace {

Vec histogram(const Mat& pts, const Box& box, int bins, double eps) {
  Vec h = Vec::Zero(static_cast<Eigen::Index>(bins) * bins);
  const double dx = (box.hi_x - box.lo_x) / bins;
  const double dy = (box.hi_y - box.lo_y) / bins;
  long kept = 0;
  for (int s = 0; s < pts.rows(); ++s) {
    if (!box.contains(pts(s, 0), pts(s, 1))) continue;
    const int ix = std::min(bins - 1, static_cast<int>((pts(s, 0) - box.lo_x) / dx));
    const int iy = std::min(bins - 1, static_cast<int>((pts(s, 1) - box.lo_y) / dy));
    h[iy * bins + ix] += 1.0;
    ++kept;
  }
  require(kept > 0, "histogram_divergences: no samples inside the bounding box");
  h /= static_cast<double>(kept);
  h.array() += eps;
  return h / h.sum();
}

}  // namespace

HistDivergence histogram_divergences(const Mat& real, const Mat& gen, const Box& box, int bins, double eps) {
  require(real.rows() >= 1 && gen.rows() >= 1, "histogram_divergences: empty sample set");
  require(real.cols() == 2 && gen.cols() == 2, "histogram_divergences: samples must be 2D");
  require(bins >= 1 && eps >= 0, "histogram_divergences: bad bins/eps");
  const Vec p = histogram(real, box, bins, eps);
  const Vec q = histogram(gen, box, bins, eps);
  HistDivergence out;
  for (int k = 0; k < p.size(); ++k) {
    const double mk = 0.5 * (p[k] + q[k]);
    if (p[k] > 0) {
      out.kl += p[k] * std::log(p[k] / q[k]);
      out.jsd += 0.5 * p[k] * std::log(p[k] / mk);
    }
    if (q[k] > 0) out.jsd += 0.5 * q[k] * std::log(q[k] / mk);
  }
  return out;
}

Mat generate(const Model& m, int n, Engine& eng) {
  const MixtureDensity p = m.density();
  Mat out(n, m.dec.data_dim());
  for (int start = 0; start < n; start += kChunk) {
    const int len = std::min(kChunk, n - start);
    out.middleRows(start, len) = m.dec.decode(sample_prior(p, len, eng).latents);
  }
  return out;
}

ResponsibilityReport responsibility_report(const Model& m, const Mat& real_batch, int T, Engine& eng) {
  require(real_batch.rows() >= 1, "responsibility_report: empty batch");
  ResponsibilityReport r;
  const MixtureDensity p = m.density();
  if (p.modes() == 1) {
    r.expected = Vec::Ones(1);
    return r;
  }
  r.applicable = true;
  const PosteriorBatch q = m.enc.encode(real_batch);
  const NoiseBlock noise = normal_block(eng, q.size(), T, q.dim());
  const BatchKlResult kl = kl_mc_batch(q, p, noise, BatchKlOptions{});
  ResponsibilityVector c;
  c.values = (kl.resp_sum.array() + static_cast<double>(kl.underflow) / (T * p.modes())) / q.size();
  r.expected = c.values;
  r.entropy_norm = normalized_entropy(c);
  for (int i = 0; i < p.modes(); ++i)
    if (c.values[i] < 1.0 / (10.0 * p.modes())) r.inactive.push_back(i);
  return r;
}

double aggregated_ce_diagnostic(const Model& m, const Mat& real_batch, int T, Engine& eng) {
  require(real_batch.rows() >= 1 && T >= 1, "aggregated_ce_diagnostic: empty batch or T < 1");
  const MixtureDensity p = m.density();
  const PosteriorBatch q = m.enc.encode(real_batch);
  const int n = q.size();
  const int d = q.dim();
  const NoiseBlock noise = normal_block(eng, n, T, d);
  Mat z(static_cast<Eigen::Index>(n) * T, d);
  for (int s = 0; s < n; ++s) {
    const auto eps = noise.sample(s);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j)
        z(static_cast<Eigen::Index>(s) * T + t, j) = q.mean(s, j) + std::exp(0.5 * q.log_var(s, j)) * eps[t * d + j];
  }
  return -log_prob_mog_batch(z, p).mean();
}

EvalReport evaluate(const Model& m, const std::string& dataset, const EvalConfig& cfg, std::uint64_t seed) {
  const Box box = bounding_box(dataset);
  Engine held = make_engine(seed, Stream::heldout);
  Engine eng = make_engine(seed, Stream::eval);
  const Mat heldout = sample_dataset(dataset, cfg.heldout, held);
  const Mat real = sample_dataset(dataset, cfg.hist_samples, held);

  EvalReport r;
  r.grid = cfg.grid;
  r.hist_bins = cfg.hist_bins;
  r.hist_samples = cfg.hist_samples;
  r.heldout = cfg.heldout;
  r.scale_gnelbo = cfg.scale_gnelbo;
  r.scale_kl = cfg.scale_kl;
  r.scale_jsd = cfg.scale_jsd;
  r.gnelbo = grid_normalized_elbo([&](const Mat& pts) { return model_elbo(m, pts, cfg.T, eng); }, box, cfg.grid,
                                  heldout);
  const Mat gen = generate(m, cfg.hist_samples, eng);
  const HistDivergence hd = histogram_divergences(real, gen, box, cfg.hist_bins, cfg.hist_eps);
  r.hist_kl = hd.kl;
  r.hist_jsd = hd.jsd;
  const ResponsibilityReport rr = responsibility_report(m, heldout, 1, eng);
  r.resp_applicable = rr.applicable;
  r.resp_entropy_norm = rr.entropy_norm;
  r.ce_diag = aggregated_ce_diagnostic(m, heldout, cfg.T, eng);
  return r;
}

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& rgb) {
  require(rgb.size() == static_cast<size_t>(width) * height * 3, "write_png: buffer size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw Error("failed closing " + path.string());
}

namespace {

struct Canvas {
  int w, h;
  double lo_x, hi_x, lo_y, hi_y;
  std::vector<unsigned char> px;

  Canvas(int size, double lx, double hx, double ly, double hy)
      : w(size), h(size), lo_x(lx), hi_x(hx), lo_y(ly), hi_y(hy), px(static_cast<size_t>(size) * size * 3, 255) {}

  void put(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    unsigned char* p = &px[(static_cast<size_t>(y) * w + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  std::pair<int, int> map(double x, double y) const {
    return {static_cast<int>((x - lo_x) / (hi_x - lo_x) * w), static_cast<int>((hi_y - y) / (hi_y - lo_y) * h)};
  }
  void dot(double x, double y, unsigned char r, unsigned char g, unsigned char b) {
    const auto [px_, py_] = map(x, y);
    put(px_, py_, r, g, b);
  }
  void disc(double x, double y, double radius, unsigned char r, unsigned char g, unsigned char b) {
    const auto [cx, cy] = map(x, y);
    const int rad = static_cast<int>(std::ceil(radius));
    for (int dy = -rad; dy <= rad; ++dy)
      for (int dx = -rad; dx <= rad; ++dx)
        if (dx * dx + dy * dy <= radius * radius) put(cx + dx, cy + dy, r, g, b);
  }
};

}  // namespace

std::vector<PlotMarker> emit_plots(const Model& m, const std::string& dataset, const std::filesystem::path& out_dir,
                                   std::uint64_t seed, int n_points) {
  std::filesystem::create_directories(out_dir);
  const Box box = bounding_box(dataset);
  Engine held = make_engine(seed, Stream::heldout);
  Engine eng = make_engine(seed, Stream::eval);
  const Mat real = sample_dataset(dataset, n_points, held);
  const Mat gen = generate(m, n_points, eng);
  constexpr int kSize = 512;

  Canvas c_real(kSize, box.lo_x, box.hi_x, box.lo_y, box.hi_y);
  for (int s = 0; s < real.rows(); ++s) c_real.dot(real(s, 0), real(s, 1), 30, 60, 200);
  write_png(out_dir / "real.png", kSize, kSize, c_real.px);

  Canvas c_gen(kSize, box.lo_x, box.hi_x, box.lo_y, box.hi_y);
  for (int s = 0; s < gen.rows(); ++s) c_gen.dot(gen(s, 0), gen(s, 1), 200, 60, 30);
  write_png(out_dir / "generated.png", kSize, kSize, c_gen.px);

  // latent: posterior samples of real data with prior means, marker area ~ weight
  const MixtureDensity p = m.density();
  const PosteriorBatch q = m.enc.encode(real);
  const Mat eps = normal_matrix(eng, q.size(), q.dim());
  Mat z = q.mean.array() + (0.5 * q.log_var.array()).exp() * eps.array();
  double lx = std::min(z.col(0).minCoeff(), p.means().col(0).minCoeff());
  double hx = std::max(z.col(0).maxCoeff(), p.means().col(0).maxCoeff());
  const int yc = std::min(1, q.dim() - 1);
  double ly = std::min(z.col(yc).minCoeff(), p.means().col(yc).minCoeff());
  double hy = std::max(z.col(yc).maxCoeff(), p.means().col(yc).maxCoeff());
  const double pad = 0.05 * std::max(hx - lx, hy - ly) + 1e-6;
  Canvas c_lat(kSize, lx - pad, hx + pad, ly - pad, hy + pad);
  for (int s = 0; s < z.rows(); ++s) c_lat.dot(z(s, 0), z(s, yc), 120, 120, 120);
  const Vec w = p.weights();
  const double wmax = w.maxCoeff();
  std::vector<PlotMarker> markers;
  for (int i = 0; i < p.modes(); ++i) {
    const double size = 2.0 + 10.0 * std::sqrt(w[i] / wmax);
    markers.push_back({i, p.means()(i, 0), p.means()(i, yc), w[i], size});
    c_lat.disc(p.means()(i, 0), p.means()(i, yc), size, 220, 20, 20);
  }
  write_png(out_dir / "latent.png", kSize, kSize, c_lat.px);

  std::ofstream csv(out_dir / "latent_markers.csv");
  if (!csv) throw Error("cannot write " + (out_dir / "latent_markers.csv").string());
  csv << std::setprecision(17) << "component,x,y,weight,size\n";
  for (const auto& mk : markers) csv << mk.component << "," << mk.x << "," << mk.y << "," << mk.weight << "," << mk.size << "\n";
  if (!csv) throw Error("failed writing latent_markers.csv");
  return markers;
}

}  // namespace introprior
