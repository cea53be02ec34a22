// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "msfc/error.hpp"
#include "msfc/protocol.hpp"

using namespace msfc;

namespace {

std::string class_name(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", prefix.c_str(), i);
  return buf;
}

// n classes; class i has 100 - i training entries (distinct frequencies) and 2 test entries.
std::vector<ManifestEntry> shaped_manifest(std::size_t n, Domain domain, const std::string& prefix) {
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = class_name(prefix, i);
    for (std::size_t k = 0; k < 100 - i; ++k) out.push_back({name + "/" + std::to_string(k), name, 0, domain, Split::train});
    for (std::size_t k = 0; k < 2; ++k) out.push_back({name + "/t" + std::to_string(k), name, 0, domain, Split::test});
  }
  return out;
}

std::vector<std::size_t> task_sizes(const FscilProtocol& p) {
  std::vector<std::size_t> out;
  for (const auto& t : p.tasks) out.push_back(t.size());
  return out;
}

// Instances without geometry; protocol code only looks at labels.
Dataset label_dataset(const std::vector<std::pair<std::string, std::size_t>>& train, std::size_t test_per_class,
                      Domain domain = Domain::synthetic) {
  Dataset d;
  for (const auto& [name, n] : train) {
    for (std::size_t i = 0; i < n; ++i) {
      LabeledInstance inst;
      inst.class_name = name;
      inst.domain = domain;
      inst.cloud.points.push_back({static_cast<double>(i), 0.0, 0.0});
      d.instances.push_back(inst);
      d.manifest.push_back({name + "/" + std::to_string(i), name, 0, domain, Split::train});
    }
    for (std::size_t i = 0; i < test_per_class; ++i) {
      LabeledInstance inst;
      inst.class_name = name;
      inst.domain = domain;
      inst.split = Split::test;
      d.instances.push_back(inst);
      d.manifest.push_back({name + "/t" + std::to_string(i), name, 0, domain, Split::test});
    }
  }
  return d;
}

}  // namespace

TEST_CASE("relative accuracy drop") {
  SUBCASE("reference sequences") {
    const std::vector<double> ours{93.6, 83.1, 78.2, 75.8, 67.1};
    const std::vector<double> ft{89.8, 9.7, 4.3, 3.3, 3.0};
    const std::vector<double> ours_long{87.6, 83.2, 81.5, 79.0, 76.8, 73.5, 72.6};
    CHECK(std::abs(delta_metric(ours) - 28.3) <= 0.05);
    CHECK(std::abs(delta_metric(ft) - 96.7) <= 0.05);
    CHECK(std::abs(delta_metric(ours_long) - 17.1) <= 0.05);
  }
  SUBCASE("constant sequence") {
    const std::vector<double> flat{0.7, 0.7, 0.7};
    CHECK(delta_metric(flat) == 0.0);
  }
  SUBCASE("scale invariance") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> acc(0.05, 1.0), scale(0.1, 10.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(5), b(5);
      const double s = scale(rng);
      for (std::size_t i = 0; i < 5; ++i) {
        a[i] = acc(rng);
        b[i] = s * a[i];
      }
      CHECK(std::abs(delta_metric(a) - delta_metric(b)) < 1e-12);
    }
  }
  SUBCASE("undefined cases") {
    const std::vector<double> zero{0.0, 0.5};
    const std::vector<double> one{0.5};
    CHECK_THROWS_AS(delta_metric(zero), MetricError);
    CHECK_THROWS_AS(delta_metric(one), MetricError);
  }
  SUBCASE("report finalize uses first and last rows") {
    EvalReport r;
    r.per_task = {{1, 10, 0.8}, {2, 12, 0.5}, {3, 14, 0.6}};
    r.finalize();
    CHECK(r.delta == doctest::Approx(25.0).epsilon(1e-12));
    EvalReport single;
    single.per_task = {{1, 10, 0.8}};
    single.finalize();
    CHECK(single.delta == 0.0);
  }
}

TEST_CASE("protocol shapes") {
  SUBCASE("forty classes in five tasks") {
    const auto m = shaped_manifest(40, Domain::synthetic, "mn");
    const FscilProtocol p = build_within_protocol(m, 5, 1);
    CHECK(task_sizes(p) == std::vector<std::size_t>{20, 5, 5, 5, 5});
  }
  SUBCASE("fifty-five classes with a 25-class base") {
    const auto m = shaped_manifest(55, Domain::synthetic, "sn");
    const FscilProtocol p = build_within_protocol(m, 7, 1, Domain::synthetic, 25);
    CHECK(task_sizes(p) == std::vector<std::size_t>{25, 5, 5, 5, 5, 5, 5});
    CHECK(p.task_count() == 7);
  }
  SUBCASE("cross-domain 39 + 10 x 5") {
    const auto syn = shaped_manifest(39, Domain::synthetic, "sn");
    const auto real = shaped_manifest(50, Domain::real, "co");
    const FscilProtocol p = build_cross_protocol(syn, real, 5, 1);
    CHECK(p.task_count() == 11);
    CHECK(task_sizes(p) == std::vector<std::size_t>{39, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5});
    for (int c : p.tasks[0]) CHECK(p.classes[static_cast<std::size_t>(c)].domain == Domain::synthetic);
    for (std::size_t t = 1; t < p.tasks.size(); ++t)
      for (int c : p.tasks[t]) CHECK(p.classes[static_cast<std::size_t>(c)].domain == Domain::real);
  }
  SUBCASE("cross-domain remainder task") {
    const auto syn = shaped_manifest(26, Domain::synthetic, "mn");
    const auto real = shaped_manifest(11, Domain::real, "so");
    CHECK(task_sizes(build_cross_protocol(syn, real, 4, 1)) == std::vector<std::size_t>{26, 4, 4, 3});
  }
  SUBCASE("overlapping names stay novel") {
    auto syn = shaped_manifest(5, Domain::synthetic, "c");
    const auto real = shaped_manifest(2, Domain::real, "c");
    const FscilProtocol p = build_cross_protocol(syn, real, 2, 1);
    CHECK(task_sizes(p) == std::vector<std::size_t>{3, 2});
    CHECK_FALSE(p.find("c00", Domain::synthetic).has_value());
    CHECK(p.find("c00", Domain::real).has_value());
  }
  SUBCASE("frequency order") {
    std::vector<ManifestEntry> m;
    const std::vector<std::pair<std::string, std::size_t>> freq{{"d", 1}, {"b", 9}, {"c", 2}, {"a", 10}};
    for (const auto& [name, n] : freq)
      for (std::size_t i = 0; i < n; ++i) m.push_back({name, name, 0, Domain::synthetic, Split::train});
    const FscilProtocol p = build_within_protocol(m, 3, 1);
    REQUIRE(p.task_count() == 3);
    std::vector<std::string> base;
    for (int c : p.tasks[0]) base.push_back(p.classes[static_cast<std::size_t>(c)].name);
    CHECK(base == std::vector<std::string>{"a", "b"});
    CHECK(p.classes[static_cast<std::size_t>(p.tasks[1][0])].name == "c");
    CHECK(p.classes[static_cast<std::size_t>(p.tasks[2][0])].name == "d");
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      std::shuffle(m.begin(), m.end(), rng);
      CHECK(build_within_protocol(m, 3, 1) == p);
    }
  }
  SUBCASE("ties broken by name") {
    const auto m = shaped_manifest(1, Domain::synthetic, "z");
    std::vector<ManifestEntry> tie;
    for (const char* n : {"q", "p", "s", "r"})
      for (int i = 0; i < 3; ++i) tie.push_back({n, n, 0, Domain::synthetic, Split::train});
    const FscilProtocol p = build_within_protocol(tie, 2, 1);
    CHECK(p.classes[0].name == "p");
    CHECK(p.classes[1].name == "q");
  }
  SUBCASE("two-task and single-task modes") {
    const auto syn = shaped_manifest(6, Domain::synthetic, "s");
    const auto real = shaped_manifest(4, Domain::real, "r");
    const FscilProtocol d = make_dfsl_protocol(syn, real, 1, 20, 3);
    CHECK(d.task_count() == 2);
    CHECK(d.shots == 1);
    CHECK(d.mode == ProtocolMode::dfsl);
    CHECK(make_single_protocol(syn, Domain::synthetic, 3).task_count() == 1);
    CHECK(build_within_protocol(syn, 1, 3).task_count() == 1);
  }
  SUBCASE("validation split") {
    const auto m = shaped_manifest(20, Domain::synthetic, "v");
    const FscilProtocol p = build_within_protocol(m, 3, 1);
    const FscilProtocol v = make_validation_protocol(p, 0.6, 2);
    CHECK(task_sizes(v) == std::vector<std::size_t>{6, 2, 2});
    CHECK(v.classes[0] == p.classes[static_cast<std::size_t>(p.tasks[0][0])]);
  }
  SUBCASE("errors") {
    const auto few = shaped_manifest(3, Domain::synthetic, "f");
    CHECK_THROWS_AS(build_within_protocol(few, 4, 1), ConfigError);
    CHECK_THROWS_AS(build_within_protocol(few, 2, 1), ConfigError);
    const auto syn = shaped_manifest(3, Domain::synthetic, "s");
    const std::vector<ManifestEntry> none;
    CHECK_THROWS_AS(build_cross_protocol(syn, none, 2, 1), ConfigError);
    FscilProtocol bad = build_within_protocol(shaped_manifest(6, Domain::synthetic, "x"), 3, 1);
    bad.tasks[1].push_back(bad.tasks[0][0]);
    CHECK_THROWS_AS(bad.validate(), ProtocolError);
    bad.tasks[1].back() = 99;
    CHECK_THROWS_AS(bad.validate(), ProtocolError);
  }
}

TEST_CASE("task disjointness holds for random manifests") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng() % 40;
    const std::size_t tasks = 2 + rng() % std::min<std::size_t>(n / 2, 8);
    const FscilProtocol p = build_within_protocol(shaped_manifest(n, Domain::synthetic, "c"), tasks, trial);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& t : p.tasks) {
      CHECK_FALSE(t.empty());
      total += t.size();
      seen.insert(t.begin(), t.end());
    }
    CHECK(seen.size() == total);
    CHECK(total == n);
    CHECK(p.task_count() == tasks);
  }
}

TEST_CASE("shot sampling") {
  Dataset d = label_dataset({{"base", 30}, {"big", 100}, {"small", 3}, {"mid", 20}}, 2);
  FscilProtocol p;
  p.classes = {{"base", Domain::synthetic}, {"big", Domain::synthetic}, {"small", Domain::synthetic},
               {"mid", Domain::synthetic}};
  p.tasks = {{0}, {1, 2}, {3}};
  p.shot_seed = 11;
  SUBCASE("exactly k, reproducible") {
    std::vector<std::string> warnings;
    const auto a = sample_shots(p, d, 1, &warnings);
    const auto b = sample_shots(p, d, 1);
    std::size_t big = 0, small = 0;
    for (const auto& inst : a) (inst.class_id == 1 ? big : small)++;
    CHECK(big == 5);
    CHECK(small == 3);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("small") != std::string::npos);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].cloud.points == b[i].cloud.points);
    std::set<double> distinct;
    for (const auto& inst : a)
      if (inst.class_id == 1) distinct.insert(inst.cloud.points[0][0]);
    CHECK(distinct.size() == 5);
  }
  SUBCASE("overlap between seeds follows the hypergeometric law") {
    // k = 5 of N = 20: overlap mean k^2/N, variance k (k/N) ((N-k)/N) ((N-k)/(N-1)).
    const double k = 5, n = 20;
    const double mean = k * k / n;
    const double var = k * (k / n) * ((n - k) / n) * ((n - k) / (n - 1));
    const std::size_t draws = 1000;
    double sum = 0.0, sum2 = 0.0;
    std::vector<std::size_t> hits(20, 0);
    for (std::size_t i = 0; i < draws; ++i) {
      std::set<double> a, b;
      for (const auto& inst : sample_shots(p, d, 2, nullptr, 2 * i)) a.insert(inst.cloud.points[0][0]);
      for (const auto& inst : sample_shots(p, d, 2, nullptr, 2 * i + 1)) b.insert(inst.cloud.points[0][0]);
      double overlap = 0.0;
      for (double x : a) {
        overlap += b.count(x);
        ++hits[static_cast<std::size_t>(x)];
      }
      sum += overlap;
      sum2 += overlap * overlap;
    }
    const double m = sum / draws;
    CHECK(std::abs(m - mean) < 4.0 * std::sqrt(var / draws));
    CHECK(std::abs(sum2 / draws - m * m - var) < 0.15);
    // each member drawn with probability k/N
    const double p_hit = k / n, sd = std::sqrt(draws * p_hit * (1 - p_hit));
    for (std::size_t h : hits) CHECK(std::abs(static_cast<double>(h) - draws * p_hit) < 4.5 * sd);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(sample_shots(p, d, 0), ProtocolError);
    CHECK_THROWS_AS(sample_shots(p, d, 5), ProtocolError);
    p.classes.push_back({"ghost", Domain::synthetic});
    p.tasks.push_back({4});
    CHECK_THROWS_AS(sample_shots(p, d, 3), ProtocolError);
  }
}

TEST_CASE("evaluation") {
  std::vector<std::pair<std::string, std::size_t>> classes;
  for (std::size_t i = 0; i < 8; ++i) classes.push_back({class_name("e", i), 4});
  const Dataset d = label_dataset(classes, 250);
  FscilProtocol p;
  for (const auto& c : classes) p.classes.push_back({c.first, Domain::synthetic});
  p.tasks = {{0, 1, 2, 3}, {4, 5}, {6, 7}};

  SUBCASE("oracle predictor") {
    std::vector<int> truth;
    const auto pool = evaluation_pool(p, d, 2);
    for (const auto& inst : pool) truth.push_back(inst.class_id);
    std::size_t call = 0;
    const Predictor oracle = [&](std::span<const PointCloud* const> clouds) {
      std::vector<int> out(truth.begin() + static_cast<std::ptrdiff_t>(call),
                           truth.begin() + static_cast<std::ptrdiff_t>(call + clouds.size()));
      call += clouds.size();
      return out;
    };
    CHECK(evaluate(oracle, d, p, 2) == 1.0);
  }
  SUBCASE("uniform random predictor") {
    std::mt19937_64 rng(4);
    const Predictor guess = [&](std::span<const PointCloud* const> clouds) {
      std::vector<int> out;
      for (std::size_t i = 0; i < clouds.size(); ++i) out.push_back(static_cast<int>(rng() % 8));
      return out;
    };
    const double acc = evaluate(guess, d, p, 2);
    const double sigma = std::sqrt(0.125 * 0.875 / 2000.0);
    CHECK(evaluation_pool(p, d, 2).size() == 2000);
    CHECK(std::abs(acc - 0.125) < 3.0 * sigma);
  }
  SUBCASE("pools grow and exclude future classes") {
    std::set<int> prev;
    for (std::size_t t = 0; t < 3; ++t) {
      std::set<int> ids;
      for (const auto& inst : evaluation_pool(p, d, t)) ids.insert(inst.class_id);
      const auto seen = p.seen_through(t);
      CHECK(std::vector<int>(ids.begin(), ids.end()) == seen);
      CHECK(std::includes(ids.begin(), ids.end(), prev.begin(), prev.end()));
      prev = ids;
    }
  }
  SUBCASE("missing test split") {
    Dataset no_test = label_dataset(classes, 0);
    CHECK_THROWS_AS(evaluation_pool(p, no_test, 0), ProtocolError);
    CHECK_THROWS_AS(evaluation_pool(p, d, 3), ProtocolError);
  }
  SUBCASE("wrong predictor output") {
    const Predictor broken = [](std::span<const PointCloud* const>) { return std::vector<int>{0}; };
    CHECK_THROWS_AS(evaluate(broken, d, p, 0), InternalError);
  }
}

TEST_CASE("protocol and report files") {
  const auto dir = std::filesystem::temp_directory_path() / "msfc_test_protocol";
  std::filesystem::create_directories(dir);
  SUBCASE("protocol round trip") {
    const FscilProtocol p =
        build_cross_protocol(shaped_manifest(6, Domain::synthetic, "s"), shaped_manifest(5, Domain::real, "r"), 2, 9);
    const std::string text = format_protocol(p);
    CHECK(text.find("[task 1]") != std::string::npos);
    CHECK(text.find("[task 4]") != std::string::npos);
    CHECK(parse_protocol(text) == p);
    write_protocol(p, dir / "p.txt");
    CHECK(read_protocol(dir / "p.txt") == p);
    CHECK_THROWS_AS(read_protocol(dir / "absent.txt"), InputError);
  }
  SUBCASE("malformed protocol text") {
    CHECK_THROWS_AS(parse_protocol("mode = within\n[task 1]\nchair nowhere\n"), ParseError);
    CHECK_THROWS_AS(parse_protocol("mode = sideways\n[task 1]\nchair synthetic\n"), ParseError);
    CHECK_THROWS_AS(parse_protocol("mode = within\n[task 1]\na synthetic\n[task 2]\na synthetic\n"), ParseError);
    CHECK_THROWS_AS(parse_protocol("mode = within\n"), ParseError);
  }
  SUBCASE("report round trip") {
    EvalReport r;
    r.per_task = {{1, 10, 0.9125}, {2, 12, 0.75}, {3, 14, 0.5}};
    r.finalize();
    const EvalReport back = parse_report_csv(format_report_csv(r));
    REQUIRE(back.per_task.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.per_task[i].task_index == r.per_task[i].task_index);
      CHECK(back.per_task[i].classes_seen == r.per_task[i].classes_seen);
      CHECK(back.per_task[i].accuracy == r.per_task[i].accuracy);
    }
    CHECK(back.delta == r.delta);
    const std::string table = format_report_table(r, "ours");
    CHECK(table.find("ours") == 0);
    CHECK(table.find("91.25") != std::string::npos);
  }
  SUBCASE("malformed reports") {
    CHECK_THROWS_AS(parse_report_csv("1,10,0.5\ndelta,0\n"), ParseError);
    CHECK_THROWS_AS(parse_report_csv("task_index,classes_seen,accuracy\n1,10,0.5\n"), ParseError);
    CHECK_THROWS_AS(parse_report_csv("task_index,classes_seen,accuracy\n1,x,0.5\ndelta,0\n"), ParseError);
  }
}
