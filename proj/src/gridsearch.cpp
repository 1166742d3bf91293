#include "introprior/gridsearch.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace introprior {

size_t GridSpec::cells() const {
  size_t n = 1;
  for (const auto& a : axes) n *= a.second.size();
  return n;
}

std::vector<std::pair<std::string, std::string>> GridSpec::cell(size_t k) const {
  require(k < cells(), "GridSpec: cell index out of range");
  std::vector<std::pair<std::string, std::string>> out(axes.size());
  for (size_t a = axes.size(); a-- > 0;) {
    const auto& vals = axes[a].second;
    out[a] = {axes[a].first, vals[k % vals.size()]};
    k /= vals.size();
  }
  return out;
}

GridSpec parse_grid_spec(const std::string& text, const std::string& origin) {
  GridSpec g;
  const auto keys = config_keys();
  for (const auto& [key, value] : parse_key_values(text, origin)) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw Error(origin + ": unknown config key '" + key + "'");
    for (const auto& a : g.axes)
      if (a.first == key) throw Error(origin + ": key '" + key + "' listed twice");
    std::vector<std::string> vals;
    std::stringstream ss(value);
    std::string v;
    while (std::getline(ss, v, ',')) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      if (b == std::string::npos) throw Error(origin + ": empty value for '" + key + "'");
      vals.push_back(v.substr(b, e - b + 1));
    }
    if (vals.empty()) throw Error(origin + ": no values for '" + key + "'");
    g.axes.emplace_back(key, std::move(vals));
  }
  return g;
}

std::vector<GridCellResult> rank_cells(std::vector<GridCellResult> cells) {
  std::stable_sort(cells.begin(), cells.end(), [](const GridCellResult& a, const GridCellResult& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.failed) return a.cell < b.cell;
    if (a.mean_hist_kl != b.mean_hist_kl) return a.mean_hist_kl < b.mean_hist_kl;
    return a.cell < b.cell;
  });
  return cells;
}

std::string grid_summary_csv(const std::vector<GridCellResult>& ranked) {
  std::ostringstream os;
  os << "rank,cell";
  if (!ranked.empty())
    for (const auto& [k, v] : ranked.front().assignment) os << ',' << k;
  os << ",seeds,hist_kl,hist_jsd,gnelbo,status\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (size_t r = 0; r < ranked.size(); ++r) {
    const auto& c = ranked[r];
    os << r + 1 << ',' << c.cell;
    for (const auto& [k, v] : c.assignment) os << ',' << v;
    os << ',' << c.reports.size();
    if (c.failed) {
      std::string msg = c.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << ",,,,failed: " << msg << '\n';
    } else {
      os << ',' << num(c.mean_hist_kl) << ',' << num(c.mean_hist_jsd) << ',' << num(c.mean_gnelbo) << ",ok\n";
    }
  }
  return os.str();
}

std::vector<GridCellResult> grid_search(const TrainConfig& base, const GridSpec& spec, int seeds,
                                        const std::filesystem::path& out_dir) {
  require(seeds >= 1, "grid_search: seeds must be >= 1");
  std::filesystem::create_directories(out_dir);
  std::vector<GridCellResult> results;
  for (size_t k = 0; k < spec.cells(); ++k) {
    GridCellResult res;
    res.cell = k;
    res.assignment = spec.cell(k);
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", k);
    const auto cell_dir = out_dir / name;
    try {
      TrainConfig cfg = base;
      for (const auto& [key, v] : res.assignment) set_config_value(cfg, key, v);
      cfg.validate();
      std::filesystem::create_directories(cell_dir);
      {
        std::ofstream m(cell_dir / "manifest.txt");
        m << "cell = " << k << "\nseeds = " << seeds << "\n";
        for (const auto& [key, v] : res.assignment) m << "grid." << key << " = " << v << "\n";
        m << cfg.to_text();
      }
      for (int sd = 0; sd < seeds; ++sd) {
        TrainConfig run = cfg;
        run.seed = base.seed + static_cast<std::uint64_t>(sd);
        const auto a = train_run(run, cell_dir / ("seed_" + std::to_string(run.seed)));
        res.reports.push_back(a.report);
      }
      for (const auto& r : res.reports) {
        res.mean_hist_kl += r.hist_kl / res.reports.size();
        res.mean_hist_jsd += r.hist_jsd / res.reports.size();
        res.mean_gnelbo += r.gnelbo / res.reports.size();
      }
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    results.push_back(std::move(res));
  }
  const auto ranked = rank_cells(results);
  std::ofstream out(out_dir / "summary.csv");
  out << grid_summary_csv(ranked);
  return ranked;
}

}  // namespace introprior
