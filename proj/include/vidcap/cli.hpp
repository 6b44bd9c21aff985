#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vidcap/grad_suite.hpp"
#include "vidcap/metrics.hpp"
#include "vidcap/train.hpp"

namespace vidcap {

// Subcommands: synth, vocab, train, caption, eval, gradcheck. An optional
// `key = value` config file supplies defaults for the invoked subcommand;
// command-line flags win. Exit codes: 0 ok, 1 usage, 2 data/format,
// 3 numeric failure.

namespace cli_detail {

inline std::vector<std::pair<std::string, std::string>> parse_kv_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(line_no) +
                       ": expected `key = value`");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty()) throw UsageError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(key, val);
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw DataError("short write to " + path.string());
}

inline ModelParams load_model(const std::filesystem::path& path, const Vocab& vocab,
                              ModelConfig& cfg_out) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.vocab_hash != vocab.hash())
    throw DataError("checkpoint " + path.string() + " was trained against a different vocab file");
  cfg_out = ckpt.config;
  return unpack_checkpoint(ckpt).first;
}

inline Vocab load_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocab: cannot open " + path.string());
  Vocab v;
  std::string line;
  int line_no = 0, expected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected token<TAB>id");
    const std::string tok = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id != expected)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ids must be contiguous, " +
                        "expected " + std::to_string(expected) + " got " + std::to_string(id));
    if (expected < 4) {
      static const char* specials[] = {"<pad>", "<start>", "<end>", "<unk>"};
      if (tok != specials[expected])
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": id " +
                          std::to_string(expected) + " must be " + specials[expected]);
    } else {
      if (v.contains(tok))
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate token " + tok);
      v.push(tok);
    }
    ++expected;
  }
  if (expected < 4) throw FormatError(path.string() + ": vocab is missing the reserved specials");
  return v;
}

struct DecodeOpts {
  std::string search = "greedy";
  int beam_width = 5;
  std::string length_norm = "on";
  int threads = 1;
};

inline std::vector<std::vector<int>> decode_all(const std::vector<VideoExample>& examples,
                                                const ModelParams& params, const ModelConfig& cfg,
                                                const DecodeOpts& opts) {
  std::vector<std::vector<int>> out(examples.size());
  detail::run_indexed(static_cast<int>(examples.size()), opts.threads, [&](int i) {
    Tensor features = to_tensor(examples[i].features);
    if (opts.search == "greedy")
      out[i] = greedy_decode(features, params, cfg);
    else
      out[i] = beam_decode(features, params, cfg, opts.beam_width, opts.length_norm == "on").tokens;
  });
  return out;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"sequence-to-sequence video captioning engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out-dir", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "root seed");
  synth->add_option("--n-videos", synth_cfg.n_videos, "number of videos");
  synth->add_option("--archetypes", synth_cfg.archetypes, "number of caption archetypes");
  synth->add_option("--t-enc", synth_cfg.t_enc, "frames per video");
  synth->add_option("--d-feat", synth_cfg.d_feat, "feature dimension");
  synth->add_option("--noise", synth_cfg.noise, "noise scale around each archetype");

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "build a vocabulary from manifest captions");
  std::string vocab_manifest, vocab_out;
  int vocab_max = 1500;
  vocab_cmd->add_option("--manifest", vocab_manifest, "input manifest")->required();
  vocab_cmd->add_option("--out", vocab_out, "vocab file to write")->required();
  vocab_cmd->add_option("--max-size", vocab_max, "maximum vocabulary size");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a captioning model");
  std::string train_manifest, train_vocab, train_out, train_cell = "lstm", train_attn = "on";
  TrainConfig tcfg;
  train_cmd->add_option("--manifest", train_manifest, "training manifest")->required();
  train_cmd->add_option("--vocab", train_vocab, "vocab file")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path to write")->required();
  train_cmd->add_option("--cell", train_cell, "recurrent cell")->check(CLI::IsMember({"lstm", "gru"}));
  train_cmd->add_option("--attention", train_attn, "attention on|off")->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--epochs", tcfg.epochs, "training epochs");
  train_cmd->add_option("--batch-size", tcfg.batch_size, "batch size");
  train_cmd->add_option("--lr", tcfg.lr, "learning rate");
  train_cmd->add_option("--split", tcfg.split_ratio, "train fraction of the split");
  train_cmd->add_option("--seed", tcfg.seed, "root seed");
  train_cmd->add_option("--threads", tcfg.threads, "worker threads");
  train_cmd->add_option("--patience", tcfg.patience, "early-stop patience (0 = off)");
  train_cmd->add_option("--clip-norm", tcfg.clip_norm, "global gradient norm clip");
  train_cmd->add_option("--t-enc", tcfg.model.t_enc, "encoder time steps");
  train_cmd->add_option("--d-feat", tcfg.model.d_feat, "feature dimension");
  train_cmd->add_option("--d-h", tcfg.model.d_h, "latent dimension");
  train_cmd->add_option("--d-emb", tcfg.model.d_emb, "token embedding dimension");
  train_cmd->add_option("--t-dec", tcfg.model.t_dec_max, "decoder time steps");

  // caption
  auto* caption_cmd = app.add_subcommand("caption", "caption the videos in a manifest");
  std::string cap_model, cap_vocab, cap_manifest, cap_out;
  cli_detail::DecodeOpts cap_opts;
  caption_cmd->add_option("--model", cap_model, "checkpoint")->required();
  caption_cmd->add_option("--vocab", cap_vocab, "vocab file")->required();
  caption_cmd->add_option("--manifest", cap_manifest, "manifest of videos to caption")->required();
  caption_cmd->add_option("--search", cap_opts.search, "decoding strategy")->check(CLI::IsMember({"greedy", "beam"}));
  caption_cmd->add_option("--beam-width", cap_opts.beam_width, "beam width");
  caption_cmd->add_option("--length-norm", cap_opts.length_norm, "length normalization on|off")->check(CLI::IsMember({"on", "off"}));
  caption_cmd->add_option("--threads", cap_opts.threads, "worker threads");
  caption_cmd->add_option("--out", cap_out, "output TSV (stdout when omitted)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score model captions against references");
  std::vector<std::string> eval_models;
  std::string eval_vocab, eval_manifest, eval_out, eval_per_video;
  cli_detail::DecodeOpts eval_opts;
  eval_cmd->add_option("--model", eval_models, "checkpoint (repeatable, one report row each)")
      ->required()
      ->take_all();
  eval_cmd->add_option("--vocab", eval_vocab, "vocab file")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "manifest with reference captions")->required();
  eval_cmd->add_option("--search", eval_opts.search, "decoding strategy")->check(CLI::IsMember({"greedy", "beam"}));
  eval_cmd->add_option("--beam-width", eval_opts.beam_width, "beam width");
  eval_cmd->add_option("--length-norm", eval_opts.length_norm, "length normalization on|off")->check(CLI::IsMember({"on", "off"}));
  eval_cmd->add_option("--threads", eval_opts.threads, "worker threads");
  eval_cmd->add_option("--out", eval_out, "report TSV (stdout when omitted)");
  eval_cmd->add_option("--per-video", eval_per_video, "per-video breakdown TSV (single model only)");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t grad_seed = 0;
  grad_cmd->add_option("--seed", grad_seed, "root seed");

  // Values read from --config become defaults; explicit flags override them
  // because every option takes its last occurrence.
  for (CLI::App* sub : {synth, vocab_cmd, train_cmd, caption_cmd, eval_cmd, grad_cmd}) {
    sub->add_option("--config", "config file of `key = value` lines");
    for (CLI::Option* opt : sub->get_options())
      if (!opt->get_lnames().empty() && opt->get_expected_min() == 1 && opt->get_expected_max() == 1)
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  try {
    if (args.empty()) throw UsageError("missing subcommand; try --help");
    const std::string& sub_name = args[0];
    CLI::App* sub = nullptr;
    for (CLI::App* s : {synth, vocab_cmd, train_cmd, caption_cmd, eval_cmd, grad_cmd})
      if (s->get_name() == sub_name) sub = s;

    // pre-scan for --config so its values can be injected ahead of the flags
    std::string config_path;
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    std::vector<std::string> merged;
    merged.push_back(sub_name);
    if (!config_path.empty()) {
      if (sub == nullptr) throw UsageError("unknown subcommand " + sub_name);
      std::set<std::string> known;
      for (CLI::Option* opt : sub->get_options())
        for (const std::string& lname : opt->get_lnames()) known.insert(lname);
      for (const auto& [key, val] : cli_detail::parse_kv_file(config_path)) {
        if (!known.count(key))
          throw UsageError("config: unknown key `" + key + "` for subcommand " + sub_name);
        merged.push_back("--" + key);
        merged.push_back(val);
      }
    }
    merged.insert(merged.end(), args.begin() + 1, args.end());

    std::vector<const char*> argv;
    argv.push_back("vidcap");
    for (const std::string& a : merged) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    auto log_config = [](const std::string& name, const std::vector<std::pair<std::string, std::string>>& kv) {
      std::cerr << "[vidcap] " << name << ":";
      for (const auto& [k, v] : kv) std::cerr << ' ' << k << '=' << v;
      std::cerr << '\n';
    };
    auto num = [](double v) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%g", v);
      return std::string(buf);
    };

    if (*synth) {
      synth_cfg.out_dir = synth_out;
      log_config("synth", {{"out-dir", synth_out},
                           {"seed", std::to_string(synth_cfg.seed)},
                           {"n-videos", std::to_string(synth_cfg.n_videos)},
                           {"archetypes", std::to_string(synth_cfg.archetypes)},
                           {"t-enc", std::to_string(synth_cfg.t_enc)},
                           {"d-feat", std::to_string(synth_cfg.d_feat)},
                           {"noise", num(synth_cfg.noise)}});
      SynthDataset ds = synth_dataset(synth_cfg);
      std::cout << "wrote " << ds.video_ids.size() << " videos to " << synth_out << " (manifest "
                << ds.manifest_path.string() << ")\n";
      return 0;
    }

    if (*vocab_cmd) {
      log_config("vocab", {{"manifest", vocab_manifest},
                           {"out", vocab_out},
                           {"max-size", std::to_string(vocab_max)}});
      std::vector<VideoExample> examples = load_manifest(vocab_manifest);
      std::vector<std::vector<std::string>> lists;
      for (const auto& ex : examples)
        for (const auto& ref : ex.references) lists.push_back(ref.tokens);
      Vocab v = build_vocab(lists, vocab_max);
      cli_detail::write_file(vocab_out, v.serialize());
      std::cout << "wrote vocab of " << v.size() << " tokens to " << vocab_out << "\n";
      return 0;
    }

    if (*train_cmd) {
      tcfg.model.cell = train_cell == "lstm" ? CellKind::Lstm : CellKind::Gru;
      tcfg.model.attention = train_attn == "on";
      log_config("train", {{"manifest", train_manifest},
                           {"vocab", train_vocab},
                           {"out", train_out},
                           {"cell", train_cell},
                           {"attention", train_attn},
                           {"epochs", std::to_string(tcfg.epochs)},
                           {"batch-size", std::to_string(tcfg.batch_size)},
                           {"lr", num(tcfg.lr)},
                           {"split", num(tcfg.split_ratio)},
                           {"seed", std::to_string(tcfg.seed)},
                           {"threads", std::to_string(tcfg.threads)},
                           {"patience", std::to_string(tcfg.patience)},
                           {"clip-norm", num(tcfg.clip_norm)},
                           {"t-enc", std::to_string(tcfg.model.t_enc)},
                           {"d-feat", std::to_string(tcfg.model.d_feat)},
                           {"d-h", std::to_string(tcfg.model.d_h)},
                           {"d-emb", std::to_string(tcfg.model.d_emb)},
                           {"t-dec", std::to_string(tcfg.model.t_dec_max)}});
      Vocab vocab = cli_detail::load_vocab_file(train_vocab);
      std::vector<VideoExample> all = load_manifest(train_manifest, &vocab);
      auto [train_set, val_set] = split_dataset(all, tcfg.split_ratio, tcfg.seed);
      TrainResult result = train(train_set, val_set, vocab, tcfg);
      save_checkpoint(train_out, result.best);
      cli_detail::write_file(train_out + ".history.tsv", history_tsv(result.history));
      std::string val_manifest;
      for (const auto& ex : val_set)
        for (const auto& ref : ex.references)
          val_manifest += ex.video_id + '\t' + ex.source_path + '\t' + ref.text + '\n';
      cli_detail::write_file(train_out + ".val.tsv", val_manifest);
      const EpochRecord& last = result.history.back();
      std::cout << "trained " << result.history.size() << " epochs; final train_loss "
                << num(last.train_loss) << ", val_loss " << num(last.val_loss) << "; checkpoint "
                << train_out << "\n";
      return 0;
    }

    if (*caption_cmd) {
      log_config("caption", {{"model", cap_model},
                             {"vocab", cap_vocab},
                             {"manifest", cap_manifest},
                             {"search", cap_opts.search},
                             {"beam-width", std::to_string(cap_opts.beam_width)},
                             {"length-norm", cap_opts.length_norm},
                             {"threads", std::to_string(cap_opts.threads)},
                             {"out", cap_out.empty() ? "-" : cap_out}});
      Vocab vocab = cli_detail::load_vocab_file(cap_vocab);
      ModelConfig mcfg;
      ModelParams params = cli_detail::load_model(cap_model, vocab, mcfg);
      std::vector<VideoExample> examples = load_manifest(cap_manifest, &vocab);
      std::vector<std::vector<int>> decoded = cli_detail::decode_all(examples, params, mcfg, cap_opts);
      std::string out;
      for (std::size_t i = 0; i < examples.size(); ++i)
        out += examples[i].video_id + '\t' + decode_tokens(decoded[i], vocab) + '\n';
      if (cap_out.empty())
        std::cout << out;
      else
        cli_detail::write_file(cap_out, out);
      return 0;
    }

    if (*eval_cmd) {
      log_config("eval", {{"models", std::to_string(eval_models.size())},
                          {"vocab", eval_vocab},
                          {"manifest", eval_manifest},
                          {"search", eval_opts.search},
                          {"beam-width", std::to_string(eval_opts.beam_width)},
                          {"length-norm", eval_opts.length_norm},
                          {"threads", std::to_string(eval_opts.threads)},
                          {"out", eval_out.empty() ? "-" : eval_out}});
      if (!eval_per_video.empty() && eval_models.size() != 1)
        throw UsageError("--per-video requires exactly one --model");
      Vocab vocab = cli_detail::load_vocab_file(eval_vocab);
      std::vector<VideoExample> examples = load_manifest(eval_manifest, &vocab);
      std::vector<std::pair<std::string, ScoreReport>> rows;
      std::set<std::string> used_labels;
      for (const std::string& model_path : eval_models) {
        ModelConfig mcfg;
        ModelParams params = cli_detail::load_model(model_path, vocab, mcfg);
        std::vector<std::vector<int>> decoded =
            cli_detail::decode_all(examples, params, mcfg, eval_opts);
        std::vector<EvalPair> pairs;
        for (std::size_t i = 0; i < examples.size(); ++i) {
          EvalPair pair;
          pair.video_id = examples[i].video_id;
          pair.candidate = tokenize(decode_tokens(decoded[i], vocab));
          for (const auto& ref : examples[i].references) pair.references.push_back(ref.tokens);
          pairs.push_back(std::move(pair));
        }
        ScoreReport rep = evaluate_corpus(pairs);
        std::string label = mcfg.variant_label();
        int suffix = 2;
        while (used_labels.count(label)) label = mcfg.variant_label() + "#" + std::to_string(suffix++);
        used_labels.insert(label);
        if (!eval_per_video.empty()) cli_detail::write_file(eval_per_video, per_video_tsv(rep));
        rows.emplace_back(label, std::move(rep));
      }
      const std::string report = report_tsv(rows);
      if (eval_out.empty())
        std::cout << report;
      else
        cli_detail::write_file(eval_out, report);
      return 0;
    }

    if (*grad_cmd) {
      log_config("gradcheck", {{"seed", std::to_string(grad_seed)}});
      bool ok = true;
      for (const GradSuiteEntry& e : gradient_suite(grad_seed)) {
        const bool pass = e.max_rel_err < 1e-5;
        ok = ok && pass;
        std::printf("%-16s max_rel_err %.3e  %s\n", e.variant.c_str(), e.max_rel_err,
                    pass ? "PASS" : "FAIL");
      }
      return ok ? 0 : 3;
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints the right help text for the active subcommand
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {  // DataError, FormatError
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace vidcap
