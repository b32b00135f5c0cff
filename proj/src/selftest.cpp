#include "gali/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <ostream>
#include <sstream>

#include "gali/analysis.hpp"
#include "gali/cli.hpp"
#include "gali/philox.hpp"
#include "gali/recompute_oracle.hpp"

namespace gali::selftest {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, PhiloxStream& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

std::vector<TokenId> random_tokens(std::size_t n, PhiloxStream& rng) {
  std::vector<TokenId> t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng.below(256));
  return t;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Logit at relative distance `dist` evaluated as Re Σ z_q conj(z_k) e^{i dist θ_j},
// pairing lanes (j, j + d/2) into one complex number.
double complex_logit(std::span<const double> q, std::span<const double> k, std::int64_t dist,
                     const RopeParams& params) {
  const std::size_t half = params.head_dim / 2;
  std::complex<double> acc = 0.0;
  for (std::size_t j = 0; j < half; ++j) {
    const std::complex<double> zq(q[j], q[j + half]);
    const std::complex<double> zk(k[j], k[j + half]);
    acc += zq * std::conj(zk) * std::polar(1.0, static_cast<double>(dist) * params.theta[j]);
  }
  return acc.real() / std::sqrt(static_cast<double>(params.head_dim));
}

std::filesystem::path artifacts(const Options& opt) {
  auto dir = opt.artifacts_dir.empty()
                 ? std::filesystem::temp_directory_path() / "gali_selftest"
                 : opt.artifacts_dir;
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Alg.-2 loop with an arbitrary group size: how many integers the packed
// prefix consumes before the sequence fits; nullopt when it never fits.
std::optional<std::int64_t> consumed_integers(std::int64_t target, std::int64_t l_tr,
                                              std::int64_t g) {
  std::int64_t i = 0;
  std::int64_t total = l_tr;
  while (total < target) {
    ++i;
    if (i > l_tr) return std::nullopt;
    total = l_tr - i + i * g;
  }
  return i;
}

}  // namespace

CriterionResult window_consistency(const Options& opt) {
  CriterionResult r{1, "window consistency", true, "", 0.0};
  const std::size_t instances = opt.quick ? 40 : 200;
  std::size_t compared = 0;
  for (std::size_t inst = 0; inst < instances && r.passed; ++inst) {
    PhiloxStream rng(1000 + inst);
    ModelSpec spec;
    spec.layers = 1 + rng.below(2);
    spec.heads = 1 + rng.below(2);
    spec.head_dim = 2 * (1 + rng.below(4));
    spec.hidden = spec.heads * spec.head_dim;
    spec.mlp_hidden = 2 * spec.hidden;
    const Model model = Model::random(spec, inst);

    GaliConfig cfg;
    cfg.train_window = 4 + rng.below(29);
    cfg.local_window = 1 + rng.below(cfg.train_window - 1);
    cfg.chunk_size = 1 + rng.below(cfg.train_window);
    cfg.noise = static_cast<NoiseMode>(rng.below(3));
    cfg.seed = inst;
    const std::size_t prompt = 1 + rng.below(cfg.train_window);
    const auto tokens = random_tokens(cfg.train_window, rng);
    const auto prompt_tokens = std::span<const TokenId>(tokens).first(prompt);

    auto exact = forward_prefill(model, prompt_tokens, RunMode::exact());
    auto gali = forward_prefill(model, prompt_tokens, RunMode::with_gali(cfg));
    bool same = bitwise_equal(exact.logits.data(), gali.logits.data());
    ++compared;
    for (std::size_t t = prompt; t < tokens.size() && same; ++t) {
      const auto step = static_cast<std::uint32_t>(t - prompt + 1);
      const auto a = decode_step(model, exact.cache, tokens[t], RunMode::exact(), step);
      const auto b = decode_step(model, gali.cache, tokens[t], RunMode::with_gali(cfg), step);
      same = bitwise_equal(a, b);
      ++compared;
    }
    if (!same) {
      r.passed = false;
      r.detail = "instance " + std::to_string(inst) + " differs from exact mode";
    }
  }
  if (r.passed) {
    r.detail = std::to_string(instances) + " models, " + std::to_string(compared) +
               " prefill/decode outputs bitwise equal";
  }
  return r;
}

CriterionResult hand_trace_fidelity(const Options&) {
  CriterionResult r{2, "hand-trace fidelity", true, "", 0.0};
  GaliConfig cfg;
  cfg.train_window = 4;
  cfg.chunk_size = 2;
  cfg.local_window = 2;
  const auto plan = plan_chunks(6, cfg);
  const auto a = interpolate_position_ids(4, 2, cfg).ids;
  const auto b = interpolate_position_ids(6, 1, cfg).ids;
  const std::vector<Rational> want_a{0, {1, 2}, 1, {3, 2}, 2, 3};
  const std::vector<Rational> want_b{0, {1, 3}, {2, 3}, 1, {4, 3}, 2, 3};
  std::ostringstream os;
  if (plan.sizes != std::vector<std::size_t>{4, 2}) {
    r.passed = false;
    os << "plan_chunks(6) wrong; ";
  }
  if (a != want_a) {
    r.passed = false;
    os << "ids(4+2) wrong; ";
  }
  if (b != want_b) {
    r.passed = false;
    os << "ids(6+1) wrong; ";
  }
  r.detail = r.passed ? "[4,2], [0,1/2,1,3/2,2,3], [0,1/3,2/3,1,4/3,2,3]" : os.str();
  return r;
}

CriterionResult interpolation_bound_linearity(const Options& opt) {
  CriterionResult r{3, "interpolation bound & linearity", true, "", 0.0};
  constexpr double kTol = 1e-12;
  const std::size_t seeds = opt.quick ? 20 : 100;
  const RopeParams params = rope_theta(16);
  double worst_affine = 0.0;
  double worst_bound = 0.0;
  std::size_t checked = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    PhiloxStream rng(5000 + seed);
    GaliConfig cfg;
    cfg.train_window = 64;
    cfg.local_window = 1 + rng.below(63);
    cfg.noise = NoiseMode::off;
    const std::size_t target = 65 + rng.below(4 * 64 - 64);
    const std::size_t span = 1 + rng.below(std::min<std::size_t>(target, 64));
    const Matrix q = random_matrix(span, 16, rng);
    const Matrix k = random_matrix(target, 16, rng);
    const auto ids = interpolate_position_ids(target - span, span, cfg);
    const Matrix out = gali_logits(q, k, ids, params, cfg, NoiseSpec{});

    const std::size_t offset = target - span;
    for (std::size_t m = 0; m < span; ++m) {
      const Rational top(ids.ids[offset + m].ceil());
      for (std::size_t n = 0; n <= offset + m; ++n) {
        const Rational dist = top - ids.ids[n];
        if (dist.is_integer()) continue;
        const double lo = complex_logit(q.row(m), k.row(n), dist.floor(), params);
        const double hi = complex_logit(q.row(m), k.row(n), dist.ceil(), params);
        const double t = (dist - Rational(dist.floor())).to_double();
        const double v = out(m, n);
        worst_affine = std::max(worst_affine, std::abs(v - ((1.0 - t) * lo + t * hi)));
        const double below = std::min(lo, hi) - v;
        const double above = v - std::max(lo, hi);
        worst_bound = std::max({worst_bound, below, above});
        ++checked;
      }
    }
  }
  r.passed = worst_affine <= kTol && worst_bound <= kTol && checked > 0;
  std::ostringstream os;
  os << checked << " interpolated logits, max affine error " << worst_affine
     << ", max interval excursion " << std::max(worst_bound, 0.0) << " (tol " << kTol << ")";
  r.detail = os.str();
  return r;
}

CriterionResult noise_law(const Options&) {
  CriterionResult r{4, "noise law", true, "", 0.0};
  constexpr std::size_t kDraws = 10000;
  constexpr double kRelTol = 0.05;
  PhiloxStream rng(77);
  GaliConfig cfg;
  cfg.train_window = 8;
  cfg.local_window = 2;
  const std::size_t n = 20;
  const RopeParams params = rope_theta(8);
  const Matrix q = random_matrix(n, 8, rng);
  const Matrix k = random_matrix(n, 8, rng);
  const auto ids = interpolate_position_ids(0, n, cfg);
  const Matrix base = gali_logits(q, k, ids, params, cfg, NoiseSpec{});

  std::ostringstream os;
  for (NoiseMode mode : {NoiseMode::seq_len, NoiseMode::train_window}) {
    cfg.noise = mode;
    const NoiseSpec spec = noise_spec(n, ids, cfg);
    std::vector<double> sum(n * n, 0.0);
    std::vector<double> sumsq(n * n, 0.0);
    bool leak = false;
    for (std::size_t s = 0; s < kDraws; ++s) {
      cfg.seed = s;
      const Matrix out = gali_logits(q, k, ids, params, cfg, spec);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double d = out(i, j) - base(i, j);
          if (spec.masked(i, j) && spec.std_dev(i, j) > 0.0) {
            sum[i * n + j] += d;
            sumsq[i * n + j] += d * d;
          } else if (d != 0.0) {
            leak = true;
          }
        }
      }
    }
    double worst = 0.0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!(spec.masked(i, j) && spec.std_dev(i, j) > 0.0)) continue;
        const double mean = sum[i * n + j] / kDraws;
        const double var = (sumsq[i * n + j] - kDraws * mean * mean) / (kDraws - 1);
        worst = std::max(worst, std::abs(std::sqrt(var) - spec.std_dev(i, j)) / spec.std_dev(i, j));
        ++cells;
      }
    }
    const bool ok = !leak && cells > 0 && worst <= kRelTol;
    r.passed = r.passed && ok;
    os << to_string(mode) << ": " << cells << " cells, max rel std error " << worst
       << (leak ? ", NONZERO noise on unmasked cell" : ", unmasked cells exactly 0") << "; ";
  }
  r.detail = os.str();
  return r;
}

CriterionResult cache_equivalence(const Options& opt) {
  CriterionResult r{5, "cache equivalence", true, "", 0.0};
  constexpr double kTol = 1e-9;
  const std::size_t seeds = opt.quick ? 4 : 20;
  const std::size_t steps = opt.quick ? 16 : 64;
  double worst = 0.0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    PhiloxStream rng(9000 + seed);
    ModelSpec spec;
    spec.layers = 2;
    spec.heads = 2;
    spec.head_dim = 8;
    spec.hidden = 16;
    spec.mlp_hidden = 32;
    const Model model = Model::random(spec, seed);
    GaliConfig cfg;
    cfg.train_window = 16;
    cfg.chunk_size = 4;
    cfg.local_window = 4;
    cfg.noise = NoiseMode::seq_len;
    cfg.seed = seed;
    const RunMode mode = RunMode::with_gali(cfg);
    const std::size_t prompt = cfg.train_window + 6;
    const auto tokens = random_tokens(prompt + steps, rng);

    auto pre = forward_prefill(model, std::span<const TokenId>(tokens).first(prompt), mode);
    {
      const auto sched = inference_schedule(prompt, 0, mode);
      const Matrix ref =
          recompute_logits(model, std::span<const TokenId>(tokens).first(prompt), sched, mode);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        worst = std::max(worst, std::abs(ref.data()[i] - pre.logits.data()[i]));
      }
    }
    for (std::size_t k = 1; k <= steps; ++k) {
      const std::size_t len = prompt + k;
      const auto cached =
          decode_step(model, pre.cache, tokens[len - 1], mode, static_cast<std::uint32_t>(k));
      const auto sched = inference_schedule(prompt, k, mode);
      const Matrix ref =
          recompute_logits(model, std::span<const TokenId>(tokens).first(len), sched, mode);
      const auto last = ref.row(len - 1);
      for (std::size_t i = 0; i < last.size(); ++i) {
        worst = std::max(worst, std::abs(last[i] - cached[i]));
      }
    }
  }
  r.passed = worst <= kTol;
  std::ostringstream os;
  os << seeds << " seeds x " << steps << " decode steps past L_tr, max |cached - recomputed| "
     << worst << " (tol " << kTol << ")";
  r.detail = os.str();
  return r;
}

CriterionResult decay_reproduction(const Options&) {
  CriterionResult r{6, "decay reproduction", true, "", 0.0};
  const std::vector<double> ones(64, 1.0);
  const auto series = decay_curve(ones, ones, rope_theta(64, 10000.0), 819);
  const auto w = windowed_abs_max(series.logits, 50);
  std::ostringstream os;
  os << "window-50 max |logit|:";
  for (double v : w) os << " " << std::round(v * 1e4) / 1e4;
  std::vector<std::size_t> rises;
  for (std::size_t i = 1; i < w.size(); ++i) {
    if (w[i] > w[i - 1]) rises.push_back(i);
  }
  r.passed = rises.empty();
  if (!rises.empty()) {
    os << "; increases into windows";
    for (auto i : rises) os << " " << i;
  }
  r.detail = os.str();
  return r;
}

CriterionResult distribution_ordering(const Options& opt) {
  CriterionResult r{7, "distribution-analysis ordering", true, "", 0.0};
  const std::size_t seeds = opt.quick ? 3 : 10;
  const std::size_t need = (9 * seeds + 9) / 10;
  const auto csv_path = artifacts(opt) / "distribution_ordering.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "seed,method,metric,row,value\n";
  std::size_t wins = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    const Model model = Model::random(ModelSpec{}, seed);
    PhiloxStream rng(seed, 99);
    const auto tokens = random_tokens(256, rng);
    GaliConfig cfg;  // L_tr 64, s 16, L_w 8, alg3 noise
    cfg.seed = seed;
    const auto study = distribution_study(model, tokens, cfg);
    for (const auto& m : study.methods) {
      csv << seed << "," << m.method << ",attn_matrix_diff,," << m.matrix_diff << "\n";
      for (std::size_t i = 0; i < m.entropy_diff.size(); ++i) {
        csv << seed << "," << m.method << ",row_entropy_diff," << i << "," << m.entropy_diff[i]
            << "\n";
      }
    }
    if (study.find("gali").matrix_diff < study.find("pi").matrix_diff) ++wins;
  }
  r.passed = wins >= need;
  r.detail = "gali < pi in " + std::to_string(wins) + "/" + std::to_string(seeds) +
             " seeds (need " + std::to_string(need) + "); CSV at " + csv_path.string();
  return r;
}

CriterionResult structural_invariants(const Options& opt) {
  CriterionResult r{8, "structural invariants", true, "", 0.0};
  const std::size_t max_target = opt.quick ? 512 : 2048;
  std::size_t cases = 0;
  std::ostringstream fail;
  for (std::size_t l_tr : {8, 64, 512}) {
    for (std::size_t l_w : {std::size_t{2}, l_tr / 8, l_tr / 2}) {
      GaliConfig cfg;
      cfg.train_window = l_tr;
      cfg.local_window = l_w;
      for (std::size_t target = l_tr; target <= max_target; ++target) {
        const auto ids = interpolate_position_ids(target - 1, 1, cfg);
        const auto alt = interpolate_position_ids(target - std::min<std::size_t>(target, 5),
                                                  std::min<std::size_t>(target, 5), cfg);
        const auto& v = ids.ids;
        bool ok = v.size() == target && alt.ids == v && v.front() == Rational(0) &&
                  v.back() == Rational(static_cast<std::int64_t>(l_tr) - 1);
        for (std::size_t i = 1; ok && i < v.size(); ++i) {
          ok = v[i - 1] < v[i] && v[i] - v[i - 1] <= Rational(1) &&
               ids.group_size % v[i].den() == 0;
        }
        std::size_t tail = 0;
        for (auto it = v.rbegin(); it != v.rend() && it->is_integer(); ++it) ++tail;
        ok = ok && tail >= l_w;

        const auto g = static_cast<std::int64_t>(group_size(target, cfg));
        const auto lt = static_cast<std::int64_t>(l_tr);
        const auto fits = [&](std::int64_t gs) {
          const auto used = consumed_integers(static_cast<std::int64_t>(target), lt, gs);
          return used && lt - *used >= static_cast<std::int64_t>(l_w);
        };
        ok = ok && fits(g) && (g == 1 || !fits(g - 1));
        ++cases;
        if (!ok && r.passed) {
          r.passed = false;
          fail << "L_tr=" << l_tr << " L_w=" << l_w << " target=" << target;
        }
      }
    }
  }
  r.detail = r.passed ? std::to_string(cases) + " (L_tr, L_w, target) cases up to " +
                            std::to_string(max_target)
                      : "first failure at " + fail.str();
  return r;
}

CriterionResult reproducibility(const Options& opt) {
  CriterionResult r{9, "reproducibility", true, "", 0.0};
  const auto dir = artifacts(opt) / "repro";
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
      {"decay", {"decay", "--dim", "64", "--max-dist", "819"}},
      {"sweep",
       {"sweep", "--chunk-sizes", "8,16,32", "--local-windows", "4,8", "--length", "128"}},
      {"analyze", {"analyze-attn", "--length", "128", "--seed", "3", "--trim", "1,90"}},
      {"ppl", {"ppl", "--mode", "gali", "--length", "160", "--context", "160"}},
      {"generate",
       {"generate", "--mode", "gali", "--train-window", "16", "--local-window", "4", "--text",
        "The quick brown fox jumps over the lazy dog.", "-n", "8", "--record-attention"}},
  };
  std::ostringstream sink;
  std::ostringstream os;
  std::size_t files = 0;
  for (const auto& [name, args] : runs) {
    auto first = args;
    const auto a = (dir / ("a_" + name)).string();
    first.insert(first.end(), {"--out", a});
    if (cli::run(first, sink, sink) != 0) {
      r.passed = false;
      os << name << ": run failed; ";
      continue;
    }
    // Replay once from the CSV echo and once from the JSON echo.
    for (const char* ext : {".csv", ".json"}) {
      const auto b = (dir / ("b_" + name + ext)).string();
      if (cli::run({"replay", a + ext, "--out", b}, sink, sink) != 0) {
        r.passed = false;
        os << name << ": replay from " << ext << " failed; ";
        continue;
      }
      for (const char* out_ext : {".csv", ".json"}) {
        ++files;
        if (read_file(a + out_ext) != read_file(b + out_ext)) {
          r.passed = false;
          os << name << out_ext << " differs after replay from " << ext << "; ";
        }
      }
    }
  }
  r.detail = r.passed ? std::to_string(files) + " replayed files bit-identical" : os.str();
  return r;
}

std::string format_line(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.passed ? "[PASS] " : "[FAIL] ") << r.id << ". " << r.name << " ("
     << std::round(r.seconds * 100) / 100 << "s): " << r.detail;
  return os.str();
}

std::vector<CriterionResult> run_all(const Options& opt, std::ostream& out) {
  const std::vector<std::function<CriterionResult(const Options&)>> checks{
      window_consistency,  hand_trace_fidelity,  interpolation_bound_linearity,
      noise_law,           cache_equivalence,    decay_reproduction,
      distribution_ordering, structural_invariants, reproducibility};
  std::vector<CriterionResult> results;
  for (std::size_t c = 0; c < checks.size(); ++c) {
    const auto& check = checks[c];
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult res;
    try {
      res = check(opt);
    } catch (const std::exception& e) {
      res.id = static_cast<int>(c + 1);
      res.name = "criterion " + std::to_string(c + 1);
      res.passed = false;
      res.detail = std::string("exception: ") + e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << format_line(res) << std::endl;
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace gali::selftest
