// SPDX-License-Identifier: Apache-2.0
#include "msfc/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "msfc/engine.hpp"
#include "msfc/error.hpp"
#include "msfc/seed.hpp"

namespace msfc {

std::string to_string(ProtocolMode m) {
  switch (m) {
    case ProtocolMode::within: return "within";
    case ProtocolMode::cross: return "cross";
    case ProtocolMode::dfsl: return "dfsl";
    case ProtocolMode::single: return "single";
  }
  return "within";
}

ProtocolMode parse_protocol_mode(const std::string& s) {
  if (s == "within") return ProtocolMode::within;
  if (s == "cross") return ProtocolMode::cross;
  if (s == "dfsl") return ProtocolMode::dfsl;
  if (s == "single") return ProtocolMode::single;
  throw ConfigError("unknown protocol mode '" + s + "'");
}

void FscilProtocol::validate() const {
  if (tasks.empty()) throw ProtocolError("protocol has no tasks");
  std::set<int> used;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].empty()) throw ProtocolError("task " + std::to_string(t + 1) + " has no classes");
    for (int c : tasks[t]) {
      if (c < 0 || static_cast<std::size_t>(c) >= classes.size())
        throw ProtocolError("task " + std::to_string(t + 1) + " references unknown class id " + std::to_string(c));
      if (!used.insert(c).second)
        throw ProtocolError("class '" + classes[static_cast<std::size_t>(c)].name + "' appears in more than one task");
    }
  }
  std::set<std::pair<std::string, Domain>> names;
  for (const auto& c : classes)
    if (!names.insert({c.name, c.domain}).second) throw ProtocolError("duplicate class '" + c.name + "'");
  if (shots == 0) throw ConfigError("shots per class must be >= 1");
}

std::vector<int> FscilProtocol::seen_through(std::size_t through_task) const {
  if (through_task >= tasks.size())
    throw ProtocolError("task " + std::to_string(through_task + 1) + " beyond protocol length " +
                        std::to_string(tasks.size()));
  std::vector<int> ids;
  for (std::size_t t = 0; t <= through_task; ++t) ids.insert(ids.end(), tasks[t].begin(), tasks[t].end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<int> FscilProtocol::find(const std::string& name, Domain domain) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i].name == name && classes[i].domain == domain) return static_cast<int>(i);
  return std::nullopt;
}

namespace {

struct ClassFreq {
  std::string name;
  std::size_t train = 0;
};

std::vector<ClassFreq> sorted_classes(std::span<const ManifestEntry> manifest, Domain domain) {
  std::map<std::string, std::size_t> freq;
  for (const auto& e : manifest) {
    if (e.domain != domain) continue;
    auto& f = freq[e.class_name];
    if (e.split == Split::train) ++f;
  }
  std::vector<ClassFreq> out;
  for (const auto& [name, n] : freq) out.push_back({name, n});
  std::stable_sort(out.begin(), out.end(), [](const ClassFreq& a, const ClassFreq& b) {
    if (a.train != b.train) return a.train > b.train;
    return a.name < b.name;
  });
  return out;
}

void append_task(FscilProtocol& p, std::span<const ClassFreq> members, Domain domain) {
  std::vector<int> ids;
  for (const auto& m : members) {
    ids.push_back(static_cast<int>(p.classes.size()));
    p.classes.push_back({m.name, domain});
  }
  p.tasks.push_back(std::move(ids));
}

void seed_protocol(FscilProtocol& p, std::uint64_t seed) {
  p.shot_seed = derive_seed(seed, {1});
  p.exemplar_seed = derive_seed(seed, {2});
}

void fill_cross(FscilProtocol& p, std::span<const ManifestEntry> synthetic_manifest,
                std::span<const ManifestEntry> real_manifest) {
  auto base = sorted_classes(synthetic_manifest, Domain::synthetic);
  const auto novel = sorted_classes(real_manifest, Domain::real);
  if (novel.empty()) throw ConfigError("real-domain manifest has no classes");
  std::set<std::string> real_names;
  for (const auto& c : novel) real_names.insert(c.name);
  std::erase_if(base, [&](const ClassFreq& c) { return real_names.count(c.name) != 0; });
  if (base.empty()) throw ConfigError("no synthetic base classes left after removing overlapping names");
  append_task(p, base, Domain::synthetic);
}

}  // namespace

FscilProtocol build_within_protocol(std::span<const ManifestEntry> manifest, std::size_t n_tasks, std::uint64_t seed,
                                    Domain domain, std::optional<std::size_t> base_count) {
  const auto classes = sorted_classes(manifest, domain);
  if (n_tasks == 0) throw ConfigError("task count must be >= 1");
  if (classes.size() < n_tasks)
    throw ConfigError("fewer classes (" + std::to_string(classes.size()) + ") than tasks (" +
                      std::to_string(n_tasks) + ")");
  FscilProtocol p;
  p.mode = ProtocolMode::within;
  seed_protocol(p, seed);
  if (n_tasks == 1) {
    append_task(p, classes, domain);
    p.mode = ProtocolMode::single;
    return p;
  }
  if (classes.size() < 4) throw ConfigError("within-dataset protocol needs at least 4 classes");
  const std::size_t n_base = base_count.value_or(classes.size() / 2);
  if (n_base == 0 || n_base >= classes.size()) throw ConfigError("base class count out of range");
  const std::size_t n_novel = classes.size() - n_base;
  if (n_novel < n_tasks - 1)
    throw ConfigError("fewer novel classes (" + std::to_string(n_novel) + ") than incremental tasks (" +
                      std::to_string(n_tasks - 1) + ")");
  append_task(p, std::span(classes).first(n_base), domain);
  std::size_t start = n_base;
  for (std::size_t remaining_tasks = n_tasks - 1; remaining_tasks > 0; --remaining_tasks) {
    const std::size_t left = classes.size() - start;
    const std::size_t size = (left + remaining_tasks - 1) / remaining_tasks;
    append_task(p, std::span(classes).subspan(start, size), domain);
    start += size;
  }
  p.validate();
  return p;
}

FscilProtocol build_cross_protocol(std::span<const ManifestEntry> synthetic_manifest,
                                   std::span<const ManifestEntry> real_manifest, std::size_t novel_per_task,
                                   std::uint64_t seed) {
  if (novel_per_task == 0) throw ConfigError("novel classes per task must be >= 1");
  FscilProtocol p;
  p.mode = ProtocolMode::cross;
  seed_protocol(p, seed);
  fill_cross(p, synthetic_manifest, real_manifest);
  const auto novel = sorted_classes(real_manifest, Domain::real);
  for (std::size_t start = 0; start < novel.size(); start += novel_per_task)
    append_task(p, std::span(novel).subspan(start, std::min(novel_per_task, novel.size() - start)), Domain::real);
  p.validate();
  return p;
}

FscilProtocol make_dfsl_protocol(std::span<const ManifestEntry> base_manifest,
                                 std::span<const ManifestEntry> novel_manifest, std::size_t k, std::size_t episodes,
                                 std::uint64_t seed) {
  if (k == 0) throw ConfigError("shots per class must be >= 1");
  FscilProtocol p;
  p.mode = ProtocolMode::dfsl;
  p.shots = k;
  p.episodes = episodes;
  seed_protocol(p, seed);
  fill_cross(p, base_manifest, novel_manifest);
  append_task(p, sorted_classes(novel_manifest, Domain::real), Domain::real);
  p.validate();
  return p;
}

FscilProtocol make_single_protocol(std::span<const ManifestEntry> manifest, Domain domain, std::uint64_t seed) {
  const auto classes = sorted_classes(manifest, domain);
  if (classes.empty()) throw ConfigError("manifest has no classes in domain " + to_string(domain));
  FscilProtocol p;
  p.mode = ProtocolMode::single;
  seed_protocol(p, seed);
  append_task(p, classes, domain);
  p.validate();
  return p;
}

FscilProtocol make_validation_protocol(const FscilProtocol& protocol, double base_fraction,
                                       std::size_t novel_per_task) {
  protocol.validate();
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) throw ConfigError("validation base fraction must be in (0, 1)");
  if (novel_per_task == 0) throw ConfigError("novel classes per task must be >= 1");
  const auto& base = protocol.tasks.front();
  const auto keep = static_cast<std::size_t>(std::llround(base_fraction * static_cast<double>(base.size())));
  if (keep == 0 || keep >= base.size()) throw ConfigError("base task too small for a validation split");
  FscilProtocol v;
  v.mode = protocol.mode == ProtocolMode::single ? ProtocolMode::within : protocol.mode;
  v.shots = protocol.shots;
  v.exemplars = protocol.exemplars;
  v.shot_seed = protocol.shot_seed;
  v.exemplar_seed = protocol.exemplar_seed;
  std::vector<int> task;
  for (std::size_t i = 0; i < base.size(); ++i) {
    v.classes.push_back(protocol.classes[static_cast<std::size_t>(base[i])]);
    task.push_back(static_cast<int>(i));
    if (i + 1 == keep || (i >= keep && ((i - keep + 1) % novel_per_task == 0 || i + 1 == base.size()))) {
      v.tasks.push_back(std::move(task));
      task.clear();
    }
  }
  v.validate();
  return v;
}

namespace {

std::map<std::pair<std::string, Domain>, int> name_index(const FscilProtocol& p) {
  std::map<std::pair<std::string, Domain>, int> idx;
  for (std::size_t i = 0; i < p.classes.size(); ++i) idx[{p.classes[i].name, p.classes[i].domain}] = static_cast<int>(i);
  return idx;
}

std::vector<LabeledInstance> collect(const FscilProtocol& protocol, const Dataset& data, std::span<const int> ids,
                                     Split split) {
  const auto idx = name_index(protocol);
  const std::set<int> wanted(ids.begin(), ids.end());
  std::vector<LabeledInstance> out;
  for (const auto& inst : data.instances) {
    if (inst.split != split) continue;
    const auto it = idx.find({inst.class_name, inst.domain});
    if (it == idx.end() || wanted.count(it->second) == 0) continue;
    LabeledInstance copy = inst;
    copy.class_id = it->second;
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace

std::vector<LabeledInstance> task_instances(const FscilProtocol& protocol, const Dataset& data, std::size_t task,
                                            Split split) {
  if (task >= protocol.tasks.size()) throw ProtocolError("task " + std::to_string(task + 1) + " does not exist");
  return collect(protocol, data, protocol.tasks[task], split);
}

std::vector<LabeledInstance> sample_shots(const FscilProtocol& protocol, const Dataset& data, std::size_t task,
                                          std::vector<std::string>* warnings,
                                          std::optional<std::uint64_t> seed_override) {
  if (task == 0) throw ProtocolError("the base task uses full training data, not k-shot samples");
  const auto pool = task_instances(protocol, data, task, Split::train);
  const std::uint64_t seed = seed_override.value_or(protocol.shot_seed);
  std::vector<LabeledInstance> out;
  for (int c : protocol.tasks[task]) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].class_id == c) members.push_back(i);
    const std::string& name = protocol.classes[static_cast<std::size_t>(c)].name;
    if (members.empty()) throw ProtocolError("class '" + name + "' has no training instances");
    if (members.size() < protocol.shots) {
      if (warnings)
        warnings->push_back("class '" + name + "' has " + std::to_string(members.size()) + " training instances, fewer than " +
                            std::to_string(protocol.shots) + " shots");
    } else {
      std::mt19937_64 rng(derive_seed(seed, {task, static_cast<std::uint64_t>(c)}));
      for (std::size_t i = 0; i < protocol.shots; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, members.size() - 1)(rng);
        std::swap(members[i], members[j]);
      }
      members.resize(protocol.shots);
      std::sort(members.begin(), members.end());
    }
    for (std::size_t i : members) out.push_back(pool[i]);
  }
  return out;
}

std::vector<LabeledInstance> evaluation_pool(const FscilProtocol& protocol, const Dataset& data,
                                             std::size_t through_task) {
  const auto ids = protocol.seen_through(through_task);
  auto pool = collect(protocol, data, ids, Split::test);
  std::set<int> present;
  for (const auto& inst : pool) present.insert(inst.class_id);
  for (int c : ids)
    if (present.count(c) == 0)
      throw ProtocolError("class '" + protocol.classes[static_cast<std::size_t>(c)].name + "' has no test instances");
  return pool;
}

double accuracy(const Predictor& predictor, std::span<const LabeledInstance> pool) {
  if (pool.empty()) throw ProtocolError("empty evaluation pool");
  std::vector<const PointCloud*> clouds;
  for (const auto& inst : pool) clouds.push_back(&inst.cloud);
  const auto predicted = predictor(clouds);
  if (predicted.size() != pool.size()) throw InternalError("predictor returned the wrong number of labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (predicted[i] == pool[i].class_id) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pool.size());
}

double evaluate(const Predictor& predictor, const Dataset& data, const FscilProtocol& protocol,
                std::size_t through_task) {
  const auto pool = evaluation_pool(protocol, data, through_task);
  return accuracy(predictor, pool);
}

double evaluate(const ModelState& state, const Dataset& data, const FscilProtocol& protocol, std::size_t through_task) {
  const Predictor p = [&state](std::span<const PointCloud* const> clouds) { return predict_batch(state, clouds); };
  return evaluate(p, data, protocol, through_task);
}

double delta_metric(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw MetricError("delta needs at least two accuracies");
  const double first = accuracies.front();
  if (!(first > 0.0)) throw MetricError("delta is undefined when the first accuracy is 0");
  return std::abs(accuracies.back() - first) / first * 100.0;
}

std::vector<double> EvalReport::accuracies() const {
  std::vector<double> a;
  for (const auto& r : per_task) a.push_back(r.accuracy);
  return a;
}

void EvalReport::finalize() {
  const auto a = accuracies();
  delta = a.size() < 2 ? 0.0 : delta_metric(a);
}

std::string format_report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "task_index,classes_seen,accuracy\n";
  char buf[64];
  for (const auto& r : report.per_task) {
    std::snprintf(buf, sizeof buf, "%.17g", r.accuracy);
    out << r.task_index << ',' << r.classes_seen << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.17g", report.delta);
  out << "delta," << buf << '\n';
  return out.str();
}

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "task_index,classes_seen,accuracy")
    throw ParseError("report: missing header line");
  EvalReport r;
  bool have_delta = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    try {
      if (cells.size() == 2 && cells[0] == "delta") {
        r.delta = std::stod(cells[1]);
        have_delta = true;
      } else if (cells.size() == 3) {
        r.per_task.push_back({std::stoul(cells[0]), std::stoul(cells[1]), std::stod(cells[2])});
      } else {
        throw ParseError("");
      }
    } catch (const std::exception&) {
      throw ParseError("report line " + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  if (!have_delta) throw ParseError("report: missing delta line");
  return r;
}

std::string format_report_table(const EvalReport& report, const std::string& title) {
  std::ostringstream out;
  char buf[96];
  if (!title.empty()) out << title << '\n';
  out << "task  classes  accuracy\n";
  for (const auto& r : report.per_task) {
    std::snprintf(buf, sizeof buf, "%4zu  %7zu  %8.2f\n", r.task_index, r.classes_seen, 100.0 * r.accuracy);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "delta  %.2f\n", report.delta);
  out << buf;
  return out.str();
}

std::string format_protocol(const FscilProtocol& p) {
  p.validate();
  std::ostringstream out;
  out << "mode = " << to_string(p.mode) << '\n';
  out << "shots = " << p.shots << '\n';
  out << "exemplars = " << p.exemplars << '\n';
  out << "seeds = " << p.shot_seed << ',' << p.exemplar_seed << '\n';
  out << "episodes = " << p.episodes << '\n';
  for (std::size_t t = 0; t < p.tasks.size(); ++t) {
    out << "\n[task " << t + 1 << "]\n";
    for (int c : p.tasks[t]) {
      const auto& cls = p.classes[static_cast<std::size_t>(c)];
      out << cls.name << ' ' << to_string(cls.domain) << '\n';
    }
  }
  return out.str();
}

FscilProtocol parse_protocol(const std::string& text) {
  FscilProtocol p;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool in_task = false;
  auto fail = [&](const std::string& why) { throw ParseError("protocol line " + std::to_string(lineno) + ": " + why); };
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line.front() == '[') {
      std::size_t n = 0;
      if (std::sscanf(line.c_str(), "[task %zu]", &n) != 1 || n != p.tasks.size() + 1) fail("bad section '" + line + "'");
      p.tasks.emplace_back();
      in_task = true;
      continue;
    }
    if (!in_task) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail("expected key = value");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        return s;
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      try {
        if (key == "mode") {
          p.mode = parse_protocol_mode(value);
        } else if (key == "shots") {
          p.shots = std::stoul(value);
        } else if (key == "exemplars") {
          p.exemplars = std::stoul(value);
        } else if (key == "episodes") {
          p.episodes = std::stoul(value);
        } else if (key == "seeds") {
          const auto comma = value.find(',');
          if (comma == std::string::npos) fail("seeds needs shot_seed,exemplar_seed");
          p.shot_seed = std::stoull(value.substr(0, comma));
          p.exemplar_seed = std::stoull(value.substr(comma + 1));
        } else {
          fail("unknown key '" + key + "'");
        }
      } catch (const ParseError&) {
        throw;
      } catch (const std::exception&) {
        fail("bad value for '" + key + "'");
      }
      continue;
    }
    std::istringstream ls(line);
    std::string name, domain, extra;
    ls >> name >> domain;
    if (name.empty() || domain.empty() || (ls >> extra)) fail("expected '<class> <domain>'");
    try {
      p.classes.push_back({name, parse_domain(domain)});
    } catch (const Error&) {
      fail("unknown domain '" + domain + "'");
    }
    p.tasks.back().push_back(static_cast<int>(p.classes.size() - 1));
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("protocol: ") + e.what());
  }
  return p;
}

void write_protocol(const FscilProtocol& protocol, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write protocol file " + path.string());
  out << format_protocol(protocol);
}

FscilProtocol read_protocol(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing protocol file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_protocol(ss.str());
}

}  // namespace msfc
