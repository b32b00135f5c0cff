#include "gali/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gali/analysis.hpp"
#include "gali/philox.hpp"
#include "gali/selftest.hpp"

namespace gali::cli {

using json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

json to_json(const RunConfig& c) {
  return json{{"schema_version", kSchemaVersion},
              {"subcommand", c.subcommand},
              {"mode", c.mode},
              {"train_window", c.train_window},
              {"chunk_size", c.chunk_size},
              {"local_window", c.local_window},
              {"noise_mode", c.noise_mode},
              {"factor", c.factor},
              {"seed", c.seed},
              {"record_attention", c.record_attention},
              {"model", c.model_path},
              {"tokens", c.tokens_path},
              {"text", c.text},
              {"length", c.length},
              {"n", c.n},
              {"context", c.context},
              {"dim", c.dim},
              {"base", c.base},
              {"max_dist", c.max_dist},
              {"decay_input", c.decay_input},
              {"chunk_sizes", c.chunk_sizes},
              {"local_windows", c.local_windows},
              {"trim", c.trim},
              {"quick", c.quick}};
}

RunConfig from_json(const json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) {
    throw Error("config echo: unsupported schema_version");
  }
  RunConfig c;
  c.subcommand = j.at("subcommand").get<std::string>();
  c.mode = j.at("mode").get<std::string>();
  c.train_window = j.at("train_window").get<std::size_t>();
  c.chunk_size = j.at("chunk_size").get<std::size_t>();
  c.local_window = j.at("local_window").get<std::size_t>();
  c.noise_mode = j.at("noise_mode").get<std::string>();
  c.factor = j.at("factor").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.record_attention = j.at("record_attention").get<bool>();
  c.model_path = j.at("model").get<std::string>();
  c.tokens_path = j.at("tokens").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.length = j.at("length").get<std::size_t>();
  c.n = j.at("n").get<std::size_t>();
  c.context = j.at("context").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.base = j.at("base").get<double>();
  c.max_dist = j.at("max_dist").get<std::size_t>();
  c.decay_input = j.at("decay_input").get<std::string>();
  c.chunk_sizes = j.at("chunk_sizes").get<std::vector<std::size_t>>();
  c.local_windows = j.at("local_windows").get<std::vector<std::size_t>>();
  c.trim = j.at("trim").get<std::vector<double>>();
  c.quick = j.at("quick").get<bool>();
  return c;
}

struct Output {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  json summary = json::object();
  int status = 0;
};

void write_outputs(const RunConfig& cfg, const Output& o, const std::filesystem::path& prefix) {
  const std::string echo = config_echo(cfg);
  {
    std::ofstream csv(prefix.string() + ".csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw Error("cannot write " + prefix.string() + ".csv");
    csv << "# config: " << echo << "\n";
    for (std::size_t i = 0; i < o.header.size(); ++i) csv << (i ? "," : "") << o.header[i];
    csv << "\n";
    for (const auto& row : o.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) csv << (i ? "," : "") << row[i];
      csv << "\n";
    }
  }
  std::ofstream js(prefix.string() + ".json", std::ios::binary | std::ios::trunc);
  if (!js) throw Error("cannot write " + prefix.string() + ".json");
  const json doc{{"schema_version", kSchemaVersion},
                 {"config", json::parse(echo)},
                 {"summary", o.summary}};
  js << doc.dump(2) << "\n";
}

Model load_model(const RunConfig& cfg) {
  if (cfg.model_path.empty()) return Model::random(ModelSpec{}, cfg.seed);
  return load_weights(cfg.model_path);
}

std::vector<TokenId> random_tokens(std::size_t n, std::uint64_t seed) {
  PhiloxStream rng(seed, 7);
  std::vector<TokenId> t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng.below(256));
  return t;
}

std::vector<TokenId> load_tokens(const RunConfig& cfg) {
  if (!cfg.tokens_path.empty()) return read_tokens(cfg.tokens_path);
  return random_tokens(cfg.length, cfg.seed);
}

GaliConfig gali_config(const RunConfig& cfg) {
  GaliConfig g{cfg.train_window, cfg.chunk_size, cfg.local_window,
               parse_noise_mode(cfg.noise_mode), cfg.seed};
  g.validate();
  return g;
}

double mean_abs(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json attention_summary(const Model& model, std::span<const TokenId> prompt, RunMode mode) {
  mode.record_attention = true;
  const auto rec = forward_prefill(model, prompt, mode).attention;
  return json{{"entropy_log_base", "e"}, {"row_entropy", row_entropy(averaged_attention(*rec))}};
}

Output cmd_decay(const RunConfig& cfg) {
  const RopeParams params = rope_theta(cfg.dim, cfg.base);
  std::vector<double> q(cfg.dim, 1.0);
  std::vector<double> k(cfg.dim, 1.0);
  if (cfg.decay_input == "random") {
    PhiloxStream rng(cfg.seed, 11);
    for (auto& v : q) v = rng.normal();
    for (auto& v : k) v = rng.normal();
  } else if (cfg.decay_input != "ones") {
    throw Error("decay: --input must be 'ones' or 'random'");
  }
  const DecaySeries s = decay_curve(q, k, params, cfg.max_dist);
  Output o;
  o.header = {"distance", "logit"};
  for (std::size_t i = 0; i < s.distances.size(); ++i) {
    o.rows.push_back({std::to_string(s.distances[i]), num(s.logits[i])});
  }
  const auto w = windowed_abs_max(s.logits, 50);
  bool non_increasing = true;
  for (std::size_t i = 1; i < w.size(); ++i) non_increasing = non_increasing && w[i] <= w[i - 1];
  o.summary = {{"rows", s.distances.size()},
               {"window", 50},
               {"windowed_abs_max", w},
               {"windowed_max_non_increasing", non_increasing}};
  return o;
}

Output cmd_sweep(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const auto tokens = load_tokens(cfg);
  RunMode ref = RunMode::exact();
  ref.record_attention = true;
  const auto reference = std::move(*forward_prefill(model, tokens, ref).attention);

  Output o;
  o.header = {"chunk_size", "local_window", "attn_matrix_diff", "mean_abs_entropy_diff"};
  json cells = json::array();
  for (std::size_t s : cfg.chunk_sizes) {
    for (std::size_t lw : cfg.local_windows) {
      RunConfig c = cfg;
      c.chunk_size = s;
      c.local_window = lw;
      RunMode mode = RunMode::with_gali(gali_config(c));
      mode.record_attention = true;
      const auto rec = std::move(*forward_prefill(model, tokens, mode).attention);
      const double diff = attn_matrix_diff(rec, reference);
      const double ent = mean_abs(row_entropy_diff(rec, reference));
      o.rows.push_back({std::to_string(s), std::to_string(lw), num(diff), num(ent)});
      cells.push_back({{"chunk_size", s}, {"local_window", lw}, {"attn_matrix_diff", diff}});
    }
  }
  o.summary = {{"sequence_length", tokens.size()}, {"cells", cells}};
  return o;
}

Output cmd_analyze(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const auto tokens = load_tokens(cfg);
  const auto study = distribution_study(model, tokens, gali_config(cfg));
  Output o;
  o.header = {"method", "metric", "row", "value"};
  json methods = json::object();
  for (const auto& m : study.methods) {
    o.rows.push_back({m.method, "attn_matrix_diff", "", num(m.matrix_diff)});
    for (std::size_t r = 0; r < m.entropy_diff.size(); ++r) {
      o.rows.push_back({m.method, "row_entropy_diff", std::to_string(r), num(m.entropy_diff[r])});
    }
    json entry{{"attn_matrix_diff", m.matrix_diff},
               {"mean_abs_row_entropy_diff", mean_abs(m.entropy_diff)}};
    if (cfg.trim.size() == 2) {
      entry["trimmed_mean_abs_row_entropy_diff"] =
          mean_abs(trim_percentiles(m.entropy_diff, cfg.trim[0], cfg.trim[1]));
    }
    methods[m.method] = entry;
  }
  o.summary = {{"sequence_length", tokens.size()},
               {"entropy_log_base", "e"},
               {"reference", "exact"},
               {"methods", methods},
               {"gali_below_pi", study.find("gali").matrix_diff < study.find("pi").matrix_diff}};
  return o;
}

Output cmd_ppl(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const auto tokens = load_tokens(cfg);
  const RunMode mode = cfg.run_mode();
  const double ppl = perplexity(model, tokens, mode, cfg.context);
  Output o;
  o.header = {"mode", "context", "tokens", "perplexity"};
  o.rows.push_back({cfg.mode, std::to_string(cfg.context), std::to_string(tokens.size()), num(ppl)});
  o.summary = {{"perplexity", ppl}, {"tokens", tokens.size()}};
  if (cfg.record_attention) {
    const auto window = std::span<const TokenId>(tokens).first(std::min(cfg.context, tokens.size()));
    o.summary["attention"] = attention_summary(model, window, mode);
  }
  return o;
}

Output cmd_generate(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  std::vector<TokenId> prompt;
  if (!cfg.text.empty()) {
    for (unsigned char ch : cfg.text) prompt.push_back(ch);
  } else {
    prompt = load_tokens(cfg);
  }
  const RunMode mode = cfg.run_mode();
  const auto out = generate(model, prompt, cfg.n, mode);
  Output o;
  o.header = {"index", "token"};
  for (std::size_t i = 0; i < out.size(); ++i) o.rows.push_back({std::to_string(i), std::to_string(out[i])});
  o.summary = {{"prompt_length", prompt.size()}, {"tokens", out}};
  if (cfg.record_attention) o.summary["attention"] = attention_summary(model, prompt, mode);
  return o;
}

Output cmd_selftest(const RunConfig& cfg, const std::filesystem::path& prefix, std::ostream& out) {
  selftest::Options opt;
  opt.quick = cfg.quick;
  opt.artifacts_dir = prefix.string() + "_artifacts";
  const auto results = selftest::run_all(opt, out);
  Output o;
  o.header = {"criterion", "name", "passed"};
  json list = json::array();
  bool all = true;
  for (const auto& r : results) {
    o.rows.push_back({std::to_string(r.id), r.name, r.passed ? "true" : "false"});
    list.push_back({{"criterion", r.id}, {"name", r.name}, {"passed", r.passed}});
    all = all && r.passed;
  }
  o.summary = {{"all_passed", all}, {"criteria", list}};
  o.status = all ? 0 : 1;
  return o;
}

void error_record(std::ostream& err, const std::string& message, int status) {
  err << json{{"error", message}, {"status", status}}.dump() << "\n";
}

}  // namespace

RunMode RunConfig::run_mode() const {
  RunMode m;
  m.attention = parse_attention_method(mode);
  m.record_attention = record_attention;
  switch (m.attention) {
    case AttentionMethod::gali: m.gali = gali_config(*this); break;
    case AttentionMethod::pi: m.baseline = {BaselineMethod::pi, factor, train_window}; break;
    case AttentionMethod::ntk: m.baseline = {BaselineMethod::ntk, factor, train_window}; break;
    case AttentionMethod::dyn_ntk: m.baseline = {BaselineMethod::dyn_ntk, factor, train_window}; break;
    case AttentionMethod::exact: break;
  }
  return m;
}

std::string config_echo(const RunConfig& cfg) { return to_json(cfg).dump(); }

RunConfig parse_config_echo(std::string_view json_text) {
  const json j = json::parse(json_text);
  return from_json(j.contains("config") ? j.at("config") : j);
}

RunConfig read_config_echo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::string first;
  std::getline(is, first);
  constexpr std::string_view kTag = "# config: ";
  if (first.starts_with(kTag)) return parse_config_echo(std::string_view(first).substr(kTag.size()));
  std::stringstream rest;
  rest << first << "\n" << is.rdbuf();
  return parse_config_echo(rest.str());
}

int execute(const RunConfig& cfg, const std::filesystem::path& out_prefix, std::ostream& out) {
  if (out_prefix.has_parent_path()) std::filesystem::create_directories(out_prefix.parent_path());
  Output o;
  if (cfg.subcommand == "decay") o = cmd_decay(cfg);
  else if (cfg.subcommand == "sweep") o = cmd_sweep(cfg);
  else if (cfg.subcommand == "analyze-attn") o = cmd_analyze(cfg);
  else if (cfg.subcommand == "ppl") o = cmd_ppl(cfg);
  else if (cfg.subcommand == "generate") o = cmd_generate(cfg);
  else if (cfg.subcommand == "selftest") o = cmd_selftest(cfg, out_prefix, out);
  else throw Error("unknown subcommand '" + cfg.subcommand + "'");
  write_outputs(cfg, o, out_prefix);
  out << "wrote " << out_prefix.string() << ".csv and " << out_prefix.string() << ".json\n";
  return o.status;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GALI toy-scale inference and analysis"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string out_prefix = "gali_out";
  std::string replay_file;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--mode", cfg.mode, "exact | gali | pi | ntk | dyn-ntk")
        ->check(CLI::IsMember({"exact", "gali", "pi", "ntk", "dyn-ntk"}));
    sub->add_option("--train-window", cfg.train_window, "training context window L_tr");
    sub->add_option("--chunk-size", cfg.chunk_size, "prefill chunk size s");
    sub->add_option("--local-window", cfg.local_window, "local window L_w");
    sub->add_option("--noise-mode", cfg.noise_mode, "alg3 | eq3 | off")
        ->check(CLI::IsMember({"alg3", "eq3", "off"}));
    sub->add_option("--factor", cfg.factor, "NTK scaling factor");
    sub->add_option("--seed", cfg.seed, "seed for model, tokens and noise");
    sub->add_option("--out", out_prefix, "output prefix (<out>.csv, <out>.json)");
    sub->add_flag("--record-attention", cfg.record_attention, "emit prefill attention entropy");
    sub->add_option("--model", cfg.model_path, "weight file (default: seeded toy model)");
    sub->add_option("--tokens", cfg.tokens_path, "token file (default: seeded random bytes)");
  };

  auto* selftest_cmd = app.add_subcommand("selftest", "run the invariant suite");
  common(selftest_cmd);
  selftest_cmd->add_flag("--quick", cfg.quick, "reduced instance counts");

  auto* generate_cmd = app.add_subcommand("generate", "greedy generation");
  common(generate_cmd);
  generate_cmd->add_option("--text", cfg.text, "prompt text (bytes)");
  generate_cmd->add_option("-n", cfg.n, "tokens to generate");
  generate_cmd->add_option("--length", cfg.length, "random prompt length when no prompt given");

  auto* ppl_cmd = app.add_subcommand("ppl", "perplexity");
  common(ppl_cmd);
  ppl_cmd->add_option("--context", cfg.context, "window length");
  ppl_cmd->add_option("--length", cfg.length, "random token count when no file given");

  auto* analyze_cmd = app.add_subcommand("analyze-attn", "attention distribution study");
  common(analyze_cmd);
  analyze_cmd->add_option("--length", cfg.length, "extrapolated sequence length");
  analyze_cmd->add_option("--trim", cfg.trim, "percentile range lo,hi for trimmed entropy stats")
      ->delimiter(',')
      ->expected(2);

  auto* decay_cmd = app.add_subcommand("decay", "logit vs relative distance");
  common(decay_cmd);
  decay_cmd->add_option("--dim", cfg.dim, "head dimension");
  decay_cmd->add_option("--base", cfg.base, "RoPE base");
  decay_cmd->add_option("--max-dist", cfg.max_dist, "largest distance");
  decay_cmd->add_option("--input", cfg.decay_input, "ones | random");

  auto* sweep_cmd = app.add_subcommand("sweep", "chunk size / local window ablation");
  common(sweep_cmd);
  sweep_cmd->add_option("--chunk-sizes", cfg.chunk_sizes, "comma-separated chunk sizes")->delimiter(',');
  sweep_cmd->add_option("--local-windows", cfg.local_windows, "comma-separated local windows")
      ->delimiter(',');
  sweep_cmd->add_option("--length", cfg.length, "extrapolated sequence length");

  auto* replay_cmd = app.add_subcommand("replay", "re-run from an output's config echo");
  replay_cmd->add_option("file", replay_file, "emitted CSV or JSON")->required();
  replay_cmd->add_option("--out", out_prefix, "output prefix");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    error_record(err, e.what(), 2);
    return 2;
  }

  try {
    if (replay_cmd->parsed()) return execute(read_config_echo(replay_file), out_prefix, out);
    cfg.subcommand = app.get_subcommands().front()->get_name();
    return execute(cfg, out_prefix, out);
  } catch (const std::exception& e) {
    error_record(err, e.what(), 2);
    return 2;
  }
}

}  // namespace gali::cli
