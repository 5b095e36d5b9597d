// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "dk/commands.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dk;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void criterion(int id, const char* title, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  if (!out.pass) ++g_failures;
  std::printf("%s  %2d  %-28s %s  [%.2f s]\n", out.pass ? "PASS" : "FAIL", id, title,
              out.detail.c_str(), seconds_since(start));
  std::fflush(stdout);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

const Codebook& rcc() {
  static const Codebook cb = load_codebook(test::data_path("rcc.codebook"));
  return cb;
}
const Codebook& sc() {
  static const Codebook cb = load_codebook(test::data_path("sc.codebook"));
  return cb;
}

std::size_t rows_at(const Codebook& cb, int s) {
  return static_cast<std::size_t>(std::count_if(cb.rows.begin(), cb.rows.end(),
                                                 [s](const KnowledgeRow& r) { return r.scale_index == s; }));
}

std::array<Bits, 3> bits_of(const SlideCode& c) {
  return {c.codes[0].bits, c.codes[1].bits, c.codes[2].bits};
}

Bits bits_from_int(std::uint64_t value, std::size_t n) {
  Bits bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (value >> (n - 1 - i)) & 1u;
  return bits;
}

Outcome codebook_fidelity() {
  const auto start = Clock::now();
  const auto r = load_codebook(test::data_path("rcc.codebook"));
  const auto s = load_codebook(test::data_path("sc.codebook"));
  validate_codebook(r);
  validate_codebook(s);
  const double t = seconds_since(start);
  const bool counts = rows_at(r, 1) == 9 && rows_at(r, 2) == 9 && rows_at(r, 3) == 10 &&
                      rows_at(s, 1) == 37 && rows_at(s, 2) == 5 && rows_at(s, 3) == 10;
  std::size_t distinct = 0, total = 0;
  for (const auto* cb : {&r, &s}) {
    std::map<Coord3, std::string> seen;
    for (const auto& p : test::oracle::knowledge_points(*cb)) {
      ++total;
      distinct += seen.emplace(Coord3{static_cast<std::uint32_t>(p.x), static_cast<std::uint32_t>(p.y),
                                      static_cast<std::uint32_t>(p.z)},
                               p.subtype)
                      .second;
    }
  }
  std::ostringstream d;
  d << "RCC rows " << rows_at(r, 1) << '/' << rows_at(r, 2) << '/' << rows_at(r, 3) << ", SC rows "
    << rows_at(s, 1) << '/' << rows_at(s, 2) << '/' << rows_at(s, 3) << ", " << total - distinct
    << " collisions among " << total << " points";
  return {counts && distinct == total && t < 1.0, d.str()};
}

Outcome distance_oracle() {
  const auto start = Clock::now();
  const KnowledgeSpace space(rcc());
  const auto points = test::oracle::knowledge_points(rcc());
  std::size_t agree = 0, ties = 0;
  const std::size_t n = std::size_t{1} << 18;
  for (std::size_t v = 0; v < n; ++v) {
    const auto code = test::make_code("c", bits_from_int(v >> 12, 6), bits_from_int((v >> 6) & 63, 6),
                                      bits_from_int(v & 63, 6));
    const auto d = space.classify(code);
    const auto o = test::oracle::classify(bits_of(code), rcc(), points);
    agree += d.predicted == o.predicted && d.tie == o.tie;
    ties += o.tie;
  }
  const double t = seconds_since(start);
  return {agree == n && t < 60.0, std::to_string(agree) + "/" + std::to_string(n) +
                                      " codes agree (" + std::to_string(ties) + " ties)"};
}

Outcome zero_distance_closure() {
  std::size_t ok = 0, total = 0;
  for (const Codebook* cb : {&rcc(), &sc()}) {
    const KnowledgeSpace space(*cb);
    for (const auto& st : cb->subtypes) {
      std::vector<Bits> rows[3];
      for (int s = 1; s <= 3; ++s) {
        for (const auto* r : cb->rows_for(st, s)) rows[s - 1].push_back(r->bits);
        if (rows[s - 1].empty()) rows[s - 1].push_back(Bits(cb->schema(s).size(), 0));
      }
      for (const auto& a : rows[0])
        for (const auto& b : rows[1])
          for (const auto& c : rows[2]) {
            const auto d = space.classify(test::make_code("k", a, b, c));
            ok += d.predicted == st && d.distance_to(st) == 0.0;
            ++total;
          }
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " row triples"};
}

Outcome shortcut_dominance() {
  const KnowledgeSpace space(sc());
  const auto ep = *sc().schema(1).index_of("Ep");
  std::mt19937_64 gen(4);
  const int n = 20000;
  int ok = 0;
  for (int i = 0; i < n; ++i) {
    auto code = test::make_code("r", test::random_bits(gen, 9), test::random_bits(gen, 4),
                                test::random_bits(gen, 5));
    code.codes[0].bits[ep] = 1;
    const auto d = space.classify(code);
    ok += d.predicted == "BD" && d.via_shortcut;
  }
  return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " codes with Ep -> BD via shortcut"};
}

Outcome worked_example() {
  const auto code = test::make_code("ex", parse_bit_string("000001100"), parse_bit_string("0000"),
                                    parse_bit_string("11000"));
  const auto d = classify(code, sc());
  const auto o = test::oracle::classify(bits_of(code), sc(), test::oracle::knowledge_points(sc()));
  const double oracle_min = std::sqrt(static_cast<double>(*std::min_element(o.min_sq.begin(), o.min_sq.end())));
  const bool pass = d.projected_coord == Coord3{12, 0, 24} && d.predicted == "SCC" &&
                    o.predicted == "SCC" && d.min_distance() == oracle_min;
  return {pass, "coord (" + std::to_string(d.projected_coord[0]) + ", " +
                    std::to_string(d.projected_coord[1]) + ", " + std::to_string(d.projected_coord[2]) +
                    "), predicted " + d.predicted + ", min distance " + fmt("%g", d.min_distance()) +
                    " (oracle " + fmt("%g", oracle_min) + ")"};
}

Outcome vote_oracle() {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20000;
  int ok = 0, even_ties = 0;
  for (int trial = 0; trial < n; ++trial) {
    const std::size_t bags = 1 + gen() % 8, width = 1 + gen() % 10;
    const double v = trial % 2 ? 0.5 : 0.05 + 0.9 * u(gen);
    std::vector<std::vector<double>> probs(bags, std::vector<double>(width));
    for (auto& b : probs)
      for (auto& p : b) p = gen() % 5 == 0 ? v : u(gen);
    std::vector<BagPrediction> preds;
    for (std::size_t b = 0; b < bags; ++b) preds.push_back({"s", 1, static_cast<int>(b), probs[b]});
    const auto expected = test::oracle::vote(probs, v);
    ok += vote_slide(preds, v).bits == expected;
    if (bags % 2 == 0)
      for (std::size_t i = 0; i < width; ++i) {
        std::size_t above = 0;
        for (const auto& b : probs) above += b[i] > v;
        even_ties += 2 * above == bags;
      }
  }
  return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " bag sets match (" +
                       std::to_string(even_ties) + " exact half-splits)"};
}

Outcome gradient_check() {
  std::mt19937_64 gen(11);
  bool pass = true;
  int min_cases = 1 << 30;
  double worst = 0.0;
  for (const auto& g : test::param_groups()) {
    const auto r = test::check_gradients(g.get, 25, gen);
    pass &= r.compared >= 20 && r.failures == 0;
    min_cases = std::min(min_cases, r.compared);
    worst = std::max(worst, r.worst_rel_error);
  }
  return {pass && worst < 1e-4, std::to_string(test::param_groups().size()) + " groups, >= " +
                                    std::to_string(min_cases) + " cases each, worst relative error " +
                                    fmt("%.2e", worst)};
}

Outcome noiseless_closure() {
  const auto start = Clock::now();
  SynthConfig rc;
  SynthConfig scfg;
  scfg.subtype_counts = {{"BCC", 60}, {"SCC", 55}, {"BD", 30}};
  std::size_t ok = 0, total = 0;
  for (const auto& [cb, cfg] : {std::pair{&rcc(), rc}, std::pair{&sc(), scfg}}) {
    const auto slides = generate_dataset(*cb, cfg);
    std::vector<BagPrediction> preds;
    std::map<std::string, std::string> truth;
    for (const auto& s : slides) {
      truth[s.slide_id] = s.true_subtype;
      for (const auto& scale : s.bag_probs) preds.insert(preds.end(), scale.begin(), scale.end());
    }
    const KnowledgeSpace space(*cb);
    for (const auto& d : space.classify_batch(vote_all(preds, Thresholds{}))) {
      ok += d.predicted == truth.at(d.slide_id);
      ++total;
    }
  }
  const double t = seconds_since(start);
  return {ok == total && total == 295 && t < 10.0,
          std::to_string(ok) + "/" + std::to_string(total) + " slides (150 RCC + 145 SC)"};
}

Outcome end_to_end_learning() {
  const auto start = Clock::now();
  test::ScratchDir dir("accept-e2e");
  std::ostringstream log;
  SynthOptions so;
  so.codebook = test::data_path("rcc.codebook");
  so.dataset = dir / "rcc";
  cmd_synth(so, log);

  TrainOptions to;
  to.dataset = so.dataset;
  to.checkpoint_dir = dir / "ck";
  cmd_train(to, log);
  auto again = to;
  again.checkpoint_dir = dir / "ck2";
  cmd_train(again, log);
  bool deterministic = true;
  for (int s = 1; s <= 3; ++s)
    deterministic &= load_checkpoint(checkpoint_path(to.checkpoint_dir, s)) ==
                     load_checkpoint(checkpoint_path(again.checkpoint_dir, s));

  PredictOptions po;
  po.codebook = so.codebook;
  po.source.dataset = so.dataset;
  po.source.checkpoint_dir = to.checkpoint_dir;
  po.out = dir / "pred.jsonl";
  cmd_predict(po, log);
  const auto ev = cmd_evaluate({po.out, DatasetFiles{so.dataset}.manifest(), so.codebook, {}}, log);
  const double t = seconds_since(start);
  const TrainConfig defaults;
  return {ev.report.accuracy >= 0.95 && deterministic && t < 300.0,
          "test accuracy " + fmt("%.4f", ev.report.accuracy) + " on " +
              std::to_string(ev.confusion.total()) + " slides, E=" + std::to_string(defaults.epochs) +
              " lr=" + fmt("%g", defaults.learning_rate) +
              (deterministic ? ", reruns identical" : ", reruns DIFFER")};
}

Outcome metrics_oracle() {
  ConfusionMatrix cm{{"A", "B", "C"}, {{8, 2, 0}, {1, 9, 0}, {0, 0, 10}}};
  const auto m = compute_metrics(cm);
  // Exact one-vs-rest fractions: P = 268/297, S = 19/20, F1 = 359/399.
  const double want[] = {9.0 / 10.0, 268.0 / 297.0, 9.0 / 10.0, 19.0 / 20.0, 359.0 / 399.0};
  const double got[] = {m.accuracy, m.macro_precision, m.macro_recall, m.macro_specificity, m.macro_f1};
  bool pass = true;
  for (int i = 0; i < 5; ++i) pass &= std::abs(got[i] - want[i]) < 1e-6;
  ConfusionMatrix diag{{"A", "B", "C"}, {{10, 0, 0}, {0, 10, 0}, {0, 0, 10}}};
  const auto p = compute_metrics(diag);
  pass &= p.accuracy == 1.0 && p.macro_precision == 1.0 && p.macro_recall == 1.0 &&
          p.macro_specificity == 1.0 && p.macro_f1 == 1.0;
  return {pass, "ACC " + fmt("%.6f", got[0]) + " P " + fmt("%.6f", got[1]) + " R " +
                    fmt("%.6f", got[2]) + " S " + fmt("%.6f", got[3]) + " F1 " + fmt("%.6f", got[4]) +
                    "; diagonal all 1.0"};
}

Outcome linear_scaling() {
  const KnowledgeSpace space(sc());
  std::mt19937_64 gen(12);
  std::vector<SlideCode> codes;
  for (int i = 0; i < 20000; ++i)
    codes.push_back(test::make_code("s" + std::to_string(i), test::random_bits(gen, 9),
                                    test::random_bits(gen, 4), test::random_bits(gen, 5)));
  const std::span<const SlideCode> half(codes.data(), 10000);
  auto best_of = [&](std::span<const SlideCode> batch) {
    double best = 1e30;
    for (int rep = 0; rep < 7; ++rep) {
      const auto start = Clock::now();
      const auto out = space.classify_batch(batch);
      best = std::min(best, seconds_since(start));
      if (out.size() != batch.size()) return -1.0;
    }
    return best;
  };
  best_of(half);  // warm-up
  const double t1 = best_of(half), t2 = best_of(codes);
  const double ratio = t2 / t1;
  return {t1 > 0 && ratio <= 2.5, "1e4 slides " + fmt("%.4f", t1) + " s, 2e4 slides " +
                                      fmt("%.4f", t2) + " s, ratio " + fmt("%.2f", ratio)};
}

Outcome sweep_consistency() {
  test::ScratchDir dir("accept-sweep");
  std::ostringstream log;
  SynthOptions so;
  so.codebook = test::data_path("sc.codebook");
  so.dataset = dir / "sc";
  so.synth.subtype_counts = {{"BCC", 60}, {"SCC", 55}, {"BD", 30}};
  so.synth.flip_noise = 0.1;
  so.synth.prob_jitter = 0.45;
  cmd_synth(so, log);

  SweepOptions sw;
  sw.codebook = so.codebook;
  sw.source.dataset = so.dataset;
  sw.grid = parse_grid("0.1:0.9:0.1");
  sw.out = dir / "sweep.csv";
  const auto points = cmd_sweep(sw, log);

  PredictOptions po;
  po.codebook = so.codebook;
  po.source.dataset = so.dataset;
  po.out = dir / "pred.jsonl";
  cmd_predict(po, log);
  const auto ev = cmd_evaluate({po.out, DatasetFiles{so.dataset}.manifest(), so.codebook, {}}, log);

  bool pass = true;
  int at_half = 0;
  for (const auto& p : points)
    if (p.v == 0.5) {
      ++at_half;
      pass &= p.accuracy == ev.report.accuracy;
    }
  return {pass && at_half == 3, "sweep at v=0.5 on each scale = " + fmt("%.6f", ev.report.accuracy) +
                                    " = evaluate accuracy (flip_noise 0.1)"};
}

}  // namespace

int main() {
  std::printf("dk acceptance suite (kernels: %s)\n",
              std::string(kernels::to_string(kernels::active_isa())).c_str());
  criterion(1, "codebook fidelity", codebook_fidelity);
  criterion(2, "distance-oracle equivalence", distance_oracle);
  criterion(3, "zero-distance closure", zero_distance_closure);
  criterion(4, "shortcut dominance", shortcut_dominance);
  criterion(5, "worked example", worked_example);
  criterion(6, "vote oracle", vote_oracle);
  criterion(7, "gradient check", gradient_check);
  criterion(8, "noiseless closure", noiseless_closure);
  criterion(9, "end-to-end learning", end_to_end_learning);
  criterion(10, "metrics oracle", metrics_oracle);
  criterion(11, "linear scaling", linear_scaling);
  criterion(12, "sweep consistency", sweep_consistency);
  std::printf("%d of 12 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
