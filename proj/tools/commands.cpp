#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mergecap/mergecap.hpp"

namespace mergecap::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? env : "mergecap_out";
}

void write_manifest(const fs::path& dir, const std::string& command, json config, json inputs, json outputs,
                    json seeds, Clock::time_point started) {
  fs::create_directories(dir);
  json m;
  m["command"] = command;
  m["config"] = std::move(config);
  m["inputs"] = std::move(inputs);
  m["outputs"] = std::move(outputs);
  m["seeds"] = std::move(seeds);
  m["tool_version"] = kToolVersion;
  m["wall_seconds"] = std::chrono::duration<double>(Clock::now() - started).count();
  write_file(dir / (command + ".manifest.json"), m.dump(2) + "\n");
}

// "7154,1000,1000" (counts) or "0.8,0.1,0.1" (ratios summing to 1).
SplitCounts resolve_split(const std::string& spec, std::size_t n) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() != 3) throw SplitError("split spec must have three comma-separated values: " + spec);

  const bool ratios = std::any_of(parts.begin(), parts.end(), [](const std::string& p) {
    return p.find_first_of(".eE") != std::string::npos;
  });
  try {
    if (!ratios) {
      return {std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2])};
    }
    const double a = std::stod(parts[0]), b = std::stod(parts[1]), c = std::stod(parts[2]);
    if (a < 0 || b < 0 || c < 0 || std::abs(a + b + c - 1.0) > 1e-9)
      throw SplitError("split ratios must be non-negative and sum to 1: " + spec);
    const auto train = static_cast<std::size_t>(std::floor(a * static_cast<double>(n)));
    const auto val = static_cast<std::size_t>(std::floor(b * static_cast<double>(n)));
    return {train, val, n - train - val};
  } catch (const std::logic_error&) {
    throw SplitError("unparseable split spec: " + spec);
  }
}

std::vector<std::string> unique_image_ids(const std::vector<CaptionRecord>& records) {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.image_id);
  return {ids.begin(), ids.end()};
}

struct SplitOptions {
  std::string spec = "7154,1000,1000";
  std::uint64_t seed = 0;
};

DatasetSplit split_records(const std::vector<CaptionRecord>& records, const SplitOptions& opt) {
  const auto ids = unique_image_ids(records);
  return split_dataset(ids, resolve_split(opt.spec, ids.size()), opt.seed);
}

TokenList tokenize_record(const CaptionRecord& r) {
  try {
    return tokenize(r.caption);
  } catch (const EmptyCaption& e) {
    throw EmptyCaption("image '" + r.image_id + "': " + e.what());
  }
}

void require_features(const FeatureMap& features, const std::vector<CaptionRecord>& records) {
  std::set<std::string> missing;
  for (const auto& r : records)
    if (!features.count(r.image_id)) missing.insert(r.image_id);
  if (missing.empty()) return;
  std::string list;
  std::size_t shown = 0;
  for (const auto& id : missing) {
    if (shown++ == 20) {
      list += ", ...";
      break;
    }
    list += (list.empty() ? "" : ", ") + id;
  }
  throw Error("features missing for " + std::to_string(missing.size()) + " image id(s): " + list);
}

std::size_t feature_dim(const FeatureMap& features) {
  if (features.empty()) throw FormatError("feature file holds no records");
  return features.begin()->second.size();
}

json config_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},     {"embedding_dim", c.embedding_dim}, {"conv_filters", c.conv_filters},
              {"kernel", c.kernel},             {"feature_dim", c.feature_dim},     {"hidden_dim", c.hidden_dim},
              {"max_len", c.max_len},           {"image_projection", c.image_projection}};
}

struct SearchOptions {
  std::string search = "beam";
  std::size_t beam_width = 5;
  std::size_t max_len = 0;  // 0: checkpoint max_len
  bool length_normalize = false;
};

std::size_t resolve_decode_len(const SearchOptions& s, const ModelConfig& c) {
  if (s.max_len == 0) return c.max_len;
  if (s.max_len > c.max_len)
    throw ConfigError("--max-len " + std::to_string(s.max_len) + " exceeds the model's max_len " +
                      std::to_string(c.max_len));
  return s.max_len;
}

std::vector<int> decode_image(const Checkpoint& ck, std::span<const float> feature, const SearchOptions& s) {
  const ModelScorer<float> scorer(ck.params, ck.config, feature);
  const std::size_t len = resolve_decode_len(s, ck.config);
  if (s.search == "greedy") return greedy_decode(scorer, len).ids;
  return beam_search(scorer, {s.beam_width, len, s.length_normalize}).ids;
}

json search_json(const SearchOptions& s, const ModelConfig* c) {
  json j{{"search", s.search}};
  if (s.search == "beam") j["beam_width"] = s.beam_width;
  j["max_len"] = c ? resolve_decode_len(s, *c) : s.max_len;
  j["length_normalize"] = s.length_normalize;
  return j;
}

void add_search_flags(CLI::App* cmd, SearchOptions& s) {
  cmd->add_option("--search", s.search, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));
  cmd->add_option("--beam-width", s.beam_width, "beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--max-len", s.max_len, "maximum sequence length including start (0 = model max_len)");
  cmd->add_flag("--length-normalize", s.length_normalize, "rank finished beams by mean log-prob");
}

void add_split_flags(CLI::App* cmd, SplitOptions& s) {
  cmd->add_option("--split", s.spec, "train,val,test image counts or ratios");
  cmd->add_option("--split-seed", s.seed, "seed for the image-level split");
}

// ---- build-vocab -----------------------------------------------------------

struct BuildVocabArgs {
  std::string captions;
  std::string out;
  std::size_t min_count = 1;
  SplitOptions split;
};

void cmd_build_vocab(const BuildVocabArgs& a, std::ostream& out) {
  const auto started = Clock::now();
  const auto records = load_captions(a.captions);
  const auto split = split_records(records, a.split);
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());

  std::vector<TokenList> corpus;
  for (const auto& r : records)
    if (train_ids.count(r.image_id)) corpus.push_back(tokenize_record(r));
  const auto vocab = build_vocab(corpus, a.min_count);

  const fs::path out_path = a.out.empty() ? fs::path(default_out_dir()) / "vocab.tsv" : fs::path(a.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  vocab.save(out_path);
  out << "vocabulary size " << vocab.size() << "\n";

  write_manifest(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "build-vocab",
                 json{{"min_count", a.min_count}, {"split", a.split.spec}, {"train_captions", corpus.size()},
                      {"vocab_size", vocab.size()}, {"vocab_hash", vocab.hash()}},
                 json{{"captions", a.captions}}, json{{"vocab", out_path.string()}},
                 json{{"split_seed", a.split.seed}}, started);
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string captions, features, vocab, out_dir;
  SplitOptions split;
  ModelConfig model;
  std::size_t max_len = 0;  // 0: derived from the training captions
  TrainConfig train;
  std::string optimizer = "adam";
  bool resume = false;
};

void cmd_train(TrainArgs a, std::ostream& out) {
  const auto started = Clock::now();
  if (a.out_dir.empty()) a.out_dir = default_out_dir();
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  a.train.optimizer = a.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  a.train.validate();

  const auto records = load_captions(a.captions);
  const auto features = load_features(a.features);
  require_features(features, records);
  const auto vocab = Vocabulary::load(a.vocab);
  const auto split = split_records(records, a.split);
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  const std::set<std::string> val_ids(split.val.begin(), split.val.end());

  std::vector<std::pair<const CaptionRecord*, TokenList>> train_tok, val_tok;
  for (const auto& r : records) {
    if (train_ids.count(r.image_id)) train_tok.emplace_back(&r, tokenize_record(r));
    else if (val_ids.count(r.image_id)) val_tok.emplace_back(&r, tokenize_record(r));
  }
  if (train_tok.empty()) throw EmptySplit("training split has no captions");
  if (val_tok.empty()) throw EmptySplit("validation split has no captions");

  const fs::path ckpt_path = dir / "checkpoint.mcap";
  ModelConfig config = a.model;
  ModelParams<float> initial;
  bool resumed = false;
  if (a.resume && fs::exists(ckpt_path)) {
    auto ck = load_checkpoint(ckpt_path, vocab.hash());
    config = ck.config;
    initial = std::move(ck.params);
    resumed = true;
    if (config.feature_dim != feature_dim(features))
      throw ShapeMismatch("checkpoint expects feature dimension " + std::to_string(config.feature_dim));
  } else {
    config.vocab_size = vocab.size();
    config.feature_dim = feature_dim(features);
    if (a.max_len == 0) {
      std::vector<TokenList> corpus;
      for (const auto& [r, t] : train_tok) corpus.push_back(t);
      config.max_len = default_max_len(corpus);
    } else {
      config.max_len = a.max_len;
    }
    config.validate();
    initial = init_params<float>(config);
  }

  auto make_samples = [&](const auto& tokenized) {
    std::vector<Sample<float>> s;
    for (const auto& [r, t] : tokenized) s.push_back({features.at(r->image_id), encode(t, vocab, config.max_len)});
    return s;
  };
  const auto train_set = make_samples(train_tok);
  const auto val_set = make_samples(val_tok);

  std::ofstream log(dir / "train_log.tsv", std::ios::trunc);
  if (!log) throw IoError("cannot write training log in " + dir.string());
  log << std::setprecision(9);

  TrainCallbacks<float> cb;
  const std::string vocab_hash = vocab.hash();
  cb.on_improvement = [&](const ModelParams<float>& p, const EpochRecord&) {
    save_checkpoint(ckpt_path, p, config, vocab_hash);
  };
  cb.on_epoch = [&](const EpochRecord& e) {
    log << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\t' << e.seconds << '\n' << std::flush;
    out << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "\n";
  };
  const auto result = train<float>(initial, config, a.train, train_set, val_set, cb);
  out << "best epoch " << result.history.best_epoch << " of " << result.history.epochs.size() << "\n";

  json tj{{"optimizer", a.optimizer},       {"learning_rate", a.train.learning_rate},
          {"batch_size", a.train.batch_size}, {"max_epochs", a.train.max_epochs},
          {"patience", a.train.patience},     {"clip_norm", a.train.clip_norm},
          {"split", a.split.spec},            {"resumed", resumed},
          {"best_epoch", result.history.best_epoch}, {"epochs_run", result.history.epochs.size()},
          {"train_captions", train_set.size()}, {"val_captions", val_set.size()}};
  write_manifest(dir, "train", json{{"model", config_json(config)}, {"train", tj}},
                 json{{"captions", a.captions}, {"features", a.features}, {"vocab", a.vocab}},
                 json{{"checkpoint", ckpt_path.string()}, {"log", (dir / "train_log.tsv").string()}},
                 json{{"model_seed", config.seed}, {"shuffle_seed", a.train.shuffle_seed},
                      {"split_seed", a.split.seed}},
                 started);
}

// ---- caption ---------------------------------------------------------------

struct CaptionArgs {
  std::string checkpoint, vocab, features, out_dir;
  std::vector<std::string> image_ids;
  bool all = false;
  SearchOptions search;
};

void cmd_caption(CaptionArgs a, std::ostream& out) {
  const auto started = Clock::now();
  if (a.out_dir.empty()) a.out_dir = default_out_dir();
  const auto vocab = Vocabulary::load(a.vocab);
  const auto ck = load_checkpoint(a.checkpoint, vocab.hash());
  const auto features = load_features(a.features);

  std::vector<std::string> ids;
  if (a.all) {
    for (const auto& [id, v] : features) ids.push_back(id);
  } else {
    if (a.image_ids.empty()) throw ConfigError("give --image-id or --all");
    std::set<std::string> unique(a.image_ids.begin(), a.image_ids.end());
    ids.assign(unique.begin(), unique.end());
    for (const auto& id : ids)
      if (!features.count(id)) throw Error("unknown image id: " + id);
  }

  for (const auto& id : ids) out << id << '\t' << decode_ids(decode_image(ck, features.at(id), a.search), vocab) << '\n';

  write_manifest(a.out_dir, "caption", json{{"decode", search_json(a.search, &ck.config)}, {"images", ids.size()}},
                 json{{"checkpoint", a.checkpoint}, {"vocab", a.vocab}, {"features", a.features}},
                 json{{"stdout", "image_id\\tcaption lines"}}, json{{"model_seed", ck.config.seed}}, started);
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, vocab, features, captions, out_dir, report;
  SplitOptions split;
  std::string which = "test";
  SearchOptions search;
  bool self_test = false;
};

void cmd_evaluate(EvaluateArgs a, std::ostream& out) {
  const auto started = Clock::now();
  if (a.out_dir.empty()) a.out_dir = default_out_dir();
  const auto records = load_captions(a.captions);
  const auto split = split_records(records, a.split);
  const auto& chosen = a.which == "train" ? split.train : a.which == "val" ? split.val : split.test;
  if (chosen.empty()) throw EmptyCorpus("the " + a.which + " split holds no images");

  std::map<std::string, std::vector<TokenList>> refs;
  const std::set<std::string> chosen_ids(chosen.begin(), chosen.end());
  for (const auto& r : records)
    if (chosen_ids.count(r.image_id)) refs[r.image_id].push_back(tokenize_record(r));

  std::vector<EvalPair> pairs;
  std::optional<Checkpoint> ck;
  std::optional<Vocabulary> vocab;
  FeatureMap features;
  if (!a.self_test) {
    if (a.checkpoint.empty() || a.vocab.empty() || a.features.empty())
      throw ConfigError("--checkpoint, --vocab and --features are required unless --self-test");
    vocab = Vocabulary::load(a.vocab);
    ck = load_checkpoint(a.checkpoint, vocab->hash());
    features = load_features(a.features);
    std::vector<CaptionRecord> needed;
    for (const auto& r : records)
      if (chosen_ids.count(r.image_id)) needed.push_back(r);
    require_features(features, needed);
  }
  for (const auto& [id, references] : refs) {
    EvalPair p{id, {}, references};
    if (a.self_test) {
      p.candidate = references.front();
    } else {
      const auto text = decode_ids(decode_image(*ck, features.at(id), a.search), *vocab);
      std::stringstream ss(text);
      for (std::string tok; ss >> tok;) p.candidate.push_back(tok);
    }
    pairs.push_back(std::move(p));
  }

  const auto report = evaluate_corpus(pairs);
  const std::string text = report.to_json();
  out << text << '\n';
  const fs::path report_path = a.report.empty() ? fs::path(a.out_dir) / "report.json" : fs::path(a.report);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  write_file(report_path, text + "\n");

  write_manifest(a.out_dir, "evaluate",
                 json{{"split", a.split.spec}, {"eval_split", a.which}, {"self_test", a.self_test},
                      {"decode", search_json(a.search, ck ? &ck->config : nullptr)}, {"pairs", pairs.size()}},
                 json{{"checkpoint", a.checkpoint}, {"vocab", a.vocab}, {"features", a.features},
                      {"captions", a.captions}},
                 json{{"report", report_path.string()}}, json{{"split_seed", a.split.seed}}, started);
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  ModelConfig model{11, 4, 5, 3, 3, 6, 6, false, 0};
  std::size_t batch = 2;
  double eps = 1e-5;
  double threshold = 1e-5;
  bool inject_fault = false;
  std::string out_dir;
};

bool cmd_gradcheck(GradcheckArgs a, std::ostream& out) {
  const auto started = Clock::now();
  auto problem = make_grad_check_problem(a.model, a.batch, 10 * a.eps);
  const auto groups = check_model_gradients(problem, a.eps, a.inject_fault);
  bool ok = true;
  json results = json::object();
  for (const auto& g : groups) {
    const bool pass = g.max_relative_error < a.threshold;
    ok = ok && pass;
    out << g.name << '\t' << std::scientific << std::setprecision(3) << g.max_relative_error << '\t'
        << (pass ? "PASS" : "FAIL") << '\n';
    results[g.name] = g.max_relative_error;
  }
  out << std::defaultfloat;
  if (!a.out_dir.empty())
    write_manifest(a.out_dir, "gradcheck",
                   json{{"model", config_json(problem.config)}, {"eps", a.eps}, {"threshold", a.threshold},
                        {"batch", a.batch}, {"inject_fault", a.inject_fault}, {"max_relative_error", results}},
                   json::object(), json::object(), json{{"seed", a.model.seed}, {"accepted_seed", problem.accepted_seed}},
                   started);
  return ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merge-architecture image captioning: vocabulary, training, decoding and evaluation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", kToolVersion);

  BuildVocabArgs bv;
  auto* c_vocab = app.add_subcommand("build-vocab", "build the vocabulary from the training split's captions");
  c_vocab->add_option("--captions", bv.captions, "caption file (JSON lines)")->required();
  c_vocab->add_option("--out", bv.out, "vocabulary output path");
  c_vocab->add_option("--min-count", bv.min_count, "minimum token count")->check(CLI::PositiveNumber);
  add_split_flags(c_vocab, bv.split);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train the captioning model");
  c_train->add_option("--captions", tr.captions)->required();
  c_train->add_option("--features", tr.features, "FEAT1 feature file")->required();
  c_train->add_option("--vocab", tr.vocab)->required();
  c_train->add_option("--out-dir", tr.out_dir, std::string("output directory (default $") + kOutDirEnv + ")");
  add_split_flags(c_train, tr.split);
  c_train->add_option("--embedding-dim", tr.model.embedding_dim)->check(CLI::PositiveNumber);
  c_train->add_option("--filters", tr.model.conv_filters)->check(CLI::PositiveNumber);
  c_train->add_option("--kernel", tr.model.kernel)->check(CLI::PositiveNumber);
  c_train->add_option("--hidden", tr.model.hidden_dim)->check(CLI::PositiveNumber);
  c_train->add_option("--max-len", tr.max_len, "padded sequence length (0 = longest caption + 2, capped at 40)");
  c_train->add_flag("--image-projection", tr.model.image_projection, "project image features to --hidden first");
  c_train->add_option("--seed", tr.model.seed, "parameter initialisation seed");
  c_train->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  c_train->add_option("--lr", tr.train.learning_rate)->check(CLI::PositiveNumber);
  c_train->add_option("--batch-size", tr.train.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--epochs", tr.train.max_epochs)->check(CLI::PositiveNumber);
  c_train->add_option("--patience", tr.train.patience)->check(CLI::PositiveNumber);
  c_train->add_option("--shuffle-seed", tr.train.shuffle_seed);
  c_train->add_option("--clip-norm", tr.train.clip_norm, "global gradient norm limit (<= 0 disables)");
  c_train->add_flag("--resume", tr.resume, "continue from <out-dir>/checkpoint.mcap when present");

  CaptionArgs ca;
  auto* c_caption = app.add_subcommand("caption", "generate captions for images");
  c_caption->add_option("--checkpoint", ca.checkpoint)->required();
  c_caption->add_option("--vocab", ca.vocab)->required();
  c_caption->add_option("--features", ca.features)->required();
  auto* id_opt = c_caption->add_option("--image-id", ca.image_ids, "image id (repeatable)")
                     ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  auto* all_opt = c_caption->add_flag("--all", ca.all, "caption every image in the feature file");
  id_opt->excludes(all_opt);
  c_caption->add_option("--out-dir", ca.out_dir);
  add_search_flags(c_caption, ca.search);

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "decode a split and score it with BLEU, ROUGE-L and CIDEr");
  c_eval->add_option("--checkpoint", ev.checkpoint);
  c_eval->add_option("--vocab", ev.vocab);
  c_eval->add_option("--features", ev.features);
  c_eval->add_option("--captions", ev.captions)->required();
  c_eval->add_option("--eval-split", ev.which, "which split to score")->check(CLI::IsMember({"train", "val", "test"}));
  c_eval->add_option("--report", ev.report, "report path (default <out-dir>/report.json)");
  c_eval->add_option("--out-dir", ev.out_dir);
  c_eval->add_flag("--self-test", ev.self_test, "use each image's first reference as the candidate");
  add_split_flags(c_eval, ev.split);
  add_search_flags(c_eval, ev.search);

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter group (64-bit)");
  c_grad->add_option("--vocab-size", gc.model.vocab_size)->check(CLI::Range(4, 1000));
  c_grad->add_option("--embedding-dim", gc.model.embedding_dim)->check(CLI::PositiveNumber);
  c_grad->add_option("--filters", gc.model.conv_filters)->check(CLI::PositiveNumber);
  c_grad->add_option("--kernel", gc.model.kernel)->check(CLI::PositiveNumber);
  c_grad->add_option("--feature-dim", gc.model.feature_dim)->check(CLI::PositiveNumber);
  c_grad->add_option("--hidden", gc.model.hidden_dim)->check(CLI::PositiveNumber);
  c_grad->add_option("--max-len", gc.model.max_len)->check(CLI::Range(3, 1000));
  c_grad->add_flag("--image-projection", gc.model.image_projection);
  c_grad->add_option("--seed", gc.model.seed);
  c_grad->add_option("--batch", gc.batch, "toy captions in the batch")->check(CLI::PositiveNumber);
  c_grad->add_option("--eps", gc.eps)->check(CLI::PositiveNumber);
  c_grad->add_option("--threshold", gc.threshold)->check(CLI::PositiveNumber);
  c_grad->add_flag("--inject-fault", gc.inject_fault, "negate analytic gradients (self-test of the checker)");
  c_grad->add_option("--out-dir", gc.out_dir, "write a run manifest here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (c_vocab->parsed()) cmd_build_vocab(bv, out);
    else if (c_train->parsed()) cmd_train(tr, out);
    else if (c_caption->parsed()) cmd_caption(ca, out);
    else if (c_eval->parsed()) cmd_evaluate(ev, out);
    else if (c_grad->parsed()) return cmd_gradcheck(gc, out) ? 0 : 1;
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mergecap::cli
