#include "introprior/gridsearch.hpp"

#include "testing.hpp"
#include "tiny_config.hpp"

#include <doctest.h>

#include <algorithm>
#include <sstream>

using namespace introprior;
using namespace introprior::testing;

TEST_CASE("cells enumerate the product with the last axis fastest") {
  const GridSpec g = parse_grid_spec("hyper.beta_rec = 1, 2\nhyper.beta_kl = a , b, c\n# note\nseed = 7\n");
  REQUIRE(g.cells() == 6);
  std::vector<std::string> seen;
  for (size_t k = 0; k < g.cells(); ++k) {
    const auto c = g.cell(k);
    REQUIRE(c.size() == 3);
    CHECK(c[0].first == "hyper.beta_rec");
    CHECK(c[2].second == "7");
    seen.push_back(c[0].second + c[1].second);
  }
  CHECK(seen == std::vector<std::string>{"1a", "1b", "1c", "2a", "2b", "2c"});
  CHECK_THROWS_AS(g.cell(6), Error);
  CHECK(GridSpec{}.cells() == 1);
}

TEST_CASE("grid files with unknown, repeated or empty entries are rejected") {
  CHECK_THROWS_AS(parse_grid_spec("hyper.nope = 1, 2\n"), Error);
  CHECK_THROWS_AS(parse_grid_spec("seed = 1\nseed = 2\n"), Error);
  CHECK_THROWS_AS(parse_grid_spec("seed = 1,,2\n"), Error);
  CHECK_THROWS_AS(parse_grid_spec("seed 1 2\n"), Error);
}

TEST_CASE("ranking matches a sort oracle and puts failed cells last") {
  Engine eng = make_engine(17, 99);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<GridCellResult> cells(12);
    for (size_t k = 0; k < cells.size(); ++k) {
      cells[k].cell = k;
      // few distinct values so ties are exercised
      cells[k].mean_hist_kl = std::floor(uniform(eng, 0, 4));
      cells[k].failed = uniform01(eng) < 0.25;
    }
    std::shuffle(cells.begin(), cells.end(), eng);
    const auto ranked = rank_cells(cells);

    std::vector<std::tuple<int, double, size_t>> keys;
    for (const auto& c : cells) keys.emplace_back(c.failed, c.failed ? 0.0 : c.mean_hist_kl, c.cell);
    std::sort(keys.begin(), keys.end());
    REQUIRE(ranked.size() == keys.size());
    for (size_t r = 0; r < ranked.size(); ++r) CHECK(ranked[r].cell == std::get<2>(keys[r]));
  }
}

TEST_CASE("summary table has one row per cell in rank order") {
  std::vector<GridCellResult> cells(3);
  for (size_t k = 0; k < 3; ++k) {
    cells[k].cell = k;
    cells[k].assignment = {{"hyper.beta_kl", std::to_string(k)}};
    cells[k].reports.resize(2);
  }
  cells[0].mean_hist_kl = 0.5;
  cells[1].failed = true;
  cells[1].error = "boom, bang";
  cells[1].reports.clear();
  cells[2].mean_hist_kl = 0.25;
  const std::string csv = grid_summary_csv(rank_cells(cells));
  std::istringstream in(csv);
  std::string header, r1, r2, r3;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  std::getline(in, r3);
  CHECK(header == "rank,cell,hyper.beta_kl,seeds,hist_kl,hist_jsd,gnelbo,status");
  CHECK(r1.rfind("1,2,2,2,0.25,", 0) == 0);
  CHECK(r2.rfind("2,0,0,2,0.5,", 0) == 0);
  CHECK(r3 == "3,1,1,0,,,,failed: boom; bang");
}

TEST_CASE("a one-cell grid is a single training run") {
  const TrainConfig base = tiny(PriorKind::mog, 21);
  const auto dir = temp_dir("grid_one");
  const auto res = grid_search(base, parse_grid_spec("hyper.beta_kl = 0.5\n"), 1, dir);
  REQUIRE(res.size() == 1);
  REQUIRE(!res[0].failed);
  TrainConfig single = base;
  single.hyper.beta_kl = 0.5;
  const RunArtifacts a = train_run(single, temp_dir("grid_single"));
  CHECK(res[0].reports.at(0).to_text() == a.report.to_text());
  CHECK(res[0].mean_hist_kl == a.report.hist_kl);
  CHECK(std::filesystem::exists(dir / "summary.csv"));
  CHECK(std::filesystem::exists(dir / "cell_000" / "manifest.txt"));
  CHECK(std::filesystem::exists(dir / "cell_000" / "seed_21" / "eval.txt"));
}

TEST_CASE("a failing cell is recorded and the search continues") {
  TrainConfig base = tiny(PriorKind::sg, 22);
  base.warmup_epochs = 1;
  base.adversarial_epochs = 1;
  const auto dir = temp_dir("grid_fail");
  // alpha below one fails validation
  const auto res = grid_search(base, parse_grid_spec("hyper.alpha = 0.5, 2\n"), 2, dir);
  REQUIRE(res.size() == 2);
  CHECK(!res[0].failed);
  CHECK(res[0].cell == 1);
  CHECK(res[0].reports.size() == 2);
  CHECK(res[1].failed);
  CHECK(res[1].error.find("alpha") != std::string::npos);
  const std::string csv = read_text_file((dir / "summary.csv").string());
  CHECK(csv.find("failed:") != std::string::npos);
}

TEST_CASE("shipped grid files parse and cover the reference settings") {
  const std::string root = INTROPRIOR_SOURCE_DIR;
  const GridSpec g = parse_grid_spec(read_text_file(root + "/configs/grid_8gaussian.txt"));
  bool found = false;
  for (size_t k = 0; k < g.cells(); ++k) {
    TrainConfig c;
    for (const auto& [key, v] : g.cell(k)) set_config_value(c, key, v);
    found |= c.hyper.beta_rec == 0.2 && c.hyper.beta_kl == 0.3 && c.hyper.beta_neg == 0.9;
  }
  CHECK(found);
  const GridSpec r = parse_grid_spec(read_text_file(root + "/configs/grid_r_entropy.txt"));
  REQUIRE(r.cells() == 4);
  std::vector<double> vals;
  for (size_t k = 0; k < 4; ++k) {
    TrainConfig c;
    for (const auto& [key, v] : r.cell(k)) set_config_value(c, key, v);
    vals.push_back(c.hyper.r_entropy);
  }
  CHECK(vals == std::vector<double>{0, 1, 10, 100});
  for (const auto& e : std::filesystem::directory_iterator(root + "/configs"))
    if (e.path().extension() == ".cfg") {
      INFO(e.path().string());
      CHECK_NOTHROW(load_config(e.path().string()).validate());
    }
}
