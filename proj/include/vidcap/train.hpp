#pragma once

#include <bit>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vidcap/features.hpp"
#include "vidcap/model.hpp"

namespace vidcap {

// Masked cross-entropy training: seeded shuffling, per-example backward with
// a fixed-order gradient reduction (results are independent of the worker
// count), global-norm clipping at 5.0, bias-corrected adaptive moments, and
// binary checkpoints.

struct LossResult {
  Tensor loss;
  int masked_positions = 0;  // zero means the loss is a constant 0
};

inline LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets,
                                     const std::vector<int>& mask) {
  int count = 0;
  for (int m : mask) count += m != 0;
  return LossResult{masked_cross_entropy(logits, targets, mask), count};
}

// Fraction of masked positions whose argmax equals the target; argmax ties
// break toward the lowest id; zero masked positions yields 0.
inline double token_accuracy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<int>& mask) {
  detail::require_rank2(logits, "token_accuracy");
  const int t_steps = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != t_steps || static_cast<int>(mask.size()) != t_steps)
    throw DimensionError("token_accuracy: targets/mask length must equal logits rows");
  int hits = 0, count = 0;
  for (int t = 0; t < t_steps; ++t) {
    if (mask[t] == 0) continue;
    ++count;
    const double* row = &logits.data[static_cast<std::size_t>(t) * v];
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    hits += best == targets[t];
  }
  return count == 0 ? 0.0 : static_cast<double>(hits) / count;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;  // aligned with the named parameter order
  std::int64_t step = 0;

  void init_like(const std::vector<std::pair<std::string, Tensor*>>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, t] : params) {
      (void)name;
      m.emplace_back(t->size(), 0.0);
      v.emplace_back(t->size(), 0.0);
    }
    step = 0;
  }
};

inline void adam_step(std::vector<std::pair<std::string, Tensor*>> params,
                      const std::vector<std::vector<double>>& grads, AdamState& state,
                      const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw UsageError("adam_step: parameter/gradient/state sizes disagree");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].second;
    const std::vector<double>& g = grads[k];
    if (g.size() != p.size())
      throw UsageError("adam_step: gradient shape mismatch for " + params[k].first);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adam_step: non-finite gradient for parameter " + params[k].first);
      double& m = state.m[k][i];
      double& v = state.v[k][i];
      m = hyper.beta1 * m + (1.0 - hyper.beta1) * g[i];
      v = hyper.beta2 * v + (1.0 - hyper.beta2) * g[i] * g[i];
      p.data[i] -= hyper.lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
    }
  }
}

// Seeded shuffle, first floor(ratio * n) to train; disjoint and exhaustive.
inline std::pair<std::vector<VideoExample>, std::vector<VideoExample>> split_dataset(
    const std::vector<VideoExample>& examples, double ratio, std::uint64_t seed) {
  if (examples.size() < 2) throw UsageError("split_dataset: need at least 2 examples");
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split_dataset: ratio must be in (0,1)");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_stream(seed, "split");
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.bounded(i + 1)]);
  const std::size_t n_train = static_cast<std::size_t>(ratio * examples.size());
  std::pair<std::vector<VideoExample>, std::vector<VideoExample>> out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(examples[order[i]]);
  return out;
}

struct TrainConfig {
  int batch_size = 320;
  int epochs = 100;
  double lr = 1e-3;
  double split_ratio = 0.85;
  std::uint64_t seed = 0;
  ModelConfig model;
  int patience = 0;  // 0 disables early stopping
  int threads = 1;
  double clip_norm = 5.0;

  void validate() const {
    if (batch_size < 1) throw UsageError("train config: batch_size must be at least 1");
    if (epochs < 1) throw UsageError("train config: epochs must be at least 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
      throw UsageError("train config: split ratio must be in (0,1)");
    if (threads < 1) throw UsageError("train config: threads must be at least 1");
    model.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  std::int64_t adam_step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline void run_indexed(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error = nullptr;
  std::mutex error_mu;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct TrainExample {
  std::size_t video = 0;  // index into the feature tensor cache
  EncodedCaption caption;
};

}  // namespace detail

struct TrainResult {
  Checkpoint best;                   // parameters at the best validation loss
  std::vector<EpochRecord> history;  // one record per completed epoch
};

inline Checkpoint make_checkpoint(ModelParams& params, const AdamState& adam,
                                  const ModelConfig& cfg, std::uint64_t vocab_hash) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_hash = vocab_hash;
  ckpt.adam_step = adam.step;
  auto named = params.named();
  for (auto& [name, t] : named) ckpt.tensors.emplace_back(name, *t);
  for (std::size_t k = 0; k < named.size(); ++k)
    ckpt.tensors.emplace_back("adam.m." + named[k].first,
                              Tensor(named[k].second->shape, adam.m[k]));
  for (std::size_t k = 0; k < named.size(); ++k)
    ckpt.tensors.emplace_back("adam.v." + named[k].first,
                              Tensor(named[k].second->shape, adam.v[k]));
  return ckpt;
}

inline std::pair<ModelParams, AdamState> unpack_checkpoint(const Checkpoint& ckpt) {
  ModelParams params = ModelParams::blank(ckpt.config);
  auto named = params.named();
  AdamState adam;
  adam.init_like(named);
  adam.step = ckpt.adam_step;
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const Shape& want) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second->shape != want)
      throw FormatError("checkpoint: tensor " + name + " has shape " +
                        shape_str(it->second->shape) + ", config expects " + shape_str(want));
    return *it->second;
  };
  for (std::size_t k = 0; k < named.size(); ++k) {
    *named[k].second = fetch(named[k].first, named[k].second->shape);
    adam.m[k] = fetch("adam.m." + named[k].first, named[k].second->shape).data;
    adam.v[k] = fetch("adam.v." + named[k].first, named[k].second->shape).data;
  }
  if (ckpt.tensors.size() != named.size() * 3)
    throw FormatError("checkpoint: unexpected tensor count " +
                      std::to_string(ckpt.tensors.size()));
  return {std::move(params), std::move(adam)};
}

// Per epoch: seeded shuffle, batch, teacher-forced forward, masked loss,
// backward, clipped adaptive-moment step, then a validation pass. Gradients
// are accumulated in example-index order so the loop is reproducible for any
// thread count.
inline TrainResult train(const std::vector<VideoExample>& train_set,
                         const std::vector<VideoExample>& val_set, const Vocab& vocab,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw UsageError("train: empty training set");
  if (val_set.empty()) throw UsageError("train: empty validation set");

  ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = vocab.size();
  mcfg.seed = cfg.seed;
  Rng init_rng = derive_stream(cfg.seed, "init");
  ModelParams params = ModelParams::init(mcfg, init_rng);
  auto named = params.named();
  AdamState adam;
  adam.init_like(named);
  AdamHyper hyper;
  hyper.lr = cfg.lr;

  auto prepare = [&](const std::vector<VideoExample>& set, std::vector<Tensor>& feats,
                     std::vector<detail::TrainExample>& out) {
    for (const auto& ex : set) {
      feats.push_back(to_tensor(ex.features));
      for (const auto& ref : ex.references)
        out.push_back(detail::TrainExample{feats.size() - 1,
                                           encode_caption(ref.tokens, vocab, mcfg.t_dec_max)});
    }
  };
  std::vector<Tensor> train_feats, val_feats;
  std::vector<detail::TrainExample> train_ex, val_ex;
  prepare(train_set, train_feats, train_ex);
  prepare(val_set, val_feats, val_ex);

  Rng shuffle_rng = derive_stream(cfg.seed, "shuffle");
  std::vector<std::size_t> order(train_ex.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  struct Sample {
    double loss_tokens = 0.0;  // loss * masked count
    double hit_tokens = 0.0;   // accuracy * masked count
    int tokens = 0;
  };
  auto evaluate = [&](const std::vector<detail::TrainExample>& set,
                      const std::vector<Tensor>& feats) {
    std::vector<Sample> samples(set.size());
    detail::run_indexed(static_cast<int>(set.size()), cfg.threads, [&](int i) {
      const auto& ex = set[i];
      Tensor logits = forced_logits(feats[ex.video], ex.caption.input, params, mcfg);
      LossResult lr = cross_entropy_loss(logits, ex.caption.target, ex.caption.mask);
      samples[i].tokens = lr.masked_positions;
      samples[i].loss_tokens = lr.loss.data[0] * lr.masked_positions;
      samples[i].hit_tokens =
          token_accuracy(logits, ex.caption.target, ex.caption.mask) * lr.masked_positions;
    });
    double loss = 0.0, hits = 0.0;
    long long tokens = 0;
    for (const Sample& s : samples) {
      loss += s.loss_tokens;
      hits += s.hit_tokens;
      tokens += s.tokens;
    }
    return std::pair<double, double>{tokens ? loss / tokens : 0.0, tokens ? hits / tokens : 0.0};
  };

  TrainResult result;
  double best_val = 0.0;
  bool have_best = false;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.bounded(i + 1)]);

    // metrics keyed by original example index; reduced in that fixed order
    std::vector<Sample> epoch_samples(train_ex.size());
    for (std::size_t batch_lo = 0; batch_lo < order.size();
         batch_lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch_hi =
          std::min(order.size(), batch_lo + static_cast<std::size_t>(cfg.batch_size));
      const int batch_n = static_cast<int>(batch_hi - batch_lo);
      std::vector<std::vector<std::vector<double>>> grads(batch_n);
      std::vector<Sample> samples(batch_n);
      try {
        detail::run_indexed(batch_n, cfg.threads, [&](int bi) {
          const auto& ex = train_ex[order[batch_lo + bi]];
          Tape tape;
          ModelParams tracked = params.tracked_on(tape);
          Tensor logits = forced_logits(train_feats[ex.video], ex.caption.input, tracked, mcfg);
          LossResult lr = cross_entropy_loss(logits, ex.caption.target, ex.caption.mask);
          tape.backward(lr.loss);
          auto tracked_named = tracked.named();
          grads[bi].reserve(tracked_named.size());
          for (auto& [name, t] : tracked_named) {
            (void)name;
            grads[bi].push_back(tape.grad(*t).data);
          }
          samples[bi].tokens = lr.masked_positions;
          samples[bi].loss_tokens = lr.loss.data[0] * lr.masked_positions;
          samples[bi].hit_tokens =
              token_accuracy(logits, ex.caption.target, ex.caption.mask) * lr.masked_positions;
        });

        // mean of per-example gradients, fixed accumulation order
        std::vector<std::vector<double>> batch_grad(named.size());
        for (std::size_t k = 0; k < named.size(); ++k)
          batch_grad[k].assign(named[k].second->size(), 0.0);
        for (int bi = 0; bi < batch_n; ++bi)
          for (std::size_t k = 0; k < named.size(); ++k)
            for (std::size_t j = 0; j < batch_grad[k].size(); ++j)
              batch_grad[k][j] += grads[bi][k][j];
        double sq_norm = 0.0;
        for (auto& g : batch_grad)
          for (double& x : g) {
            x /= batch_n;
            sq_norm += x * x;
          }
        const double norm = std::sqrt(sq_norm);
        if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
          const double scale = cfg.clip_norm / norm;
          for (auto& g : batch_grad)
            for (double& x : g) x *= scale;
        }
        adam_step(params.named(), batch_grad, adam, hyper);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_lo / cfg.batch_size) + ": " + e.what());
      }
      for (int bi = 0; bi < batch_n; ++bi) epoch_samples[order[batch_lo + bi]] = samples[bi];
    }
    double ep_loss = 0.0, ep_hits = 0.0;
    long long ep_tokens = 0;
    for (const Sample& s : epoch_samples) {
      ep_loss += s.loss_tokens;
      ep_hits += s.hit_tokens;
      ep_tokens += s.tokens;
    }

    auto [val_loss, val_acc] = evaluate(val_ex, val_feats);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = ep_tokens ? ep_loss / ep_tokens : 0.0;
    rec.train_acc = ep_tokens ? ep_hits / ep_tokens : 0.0;
    rec.val_loss = val_loss;
    rec.val_acc = val_acc;
    result.history.push_back(rec);

    if (!have_best || val_loss < best_val) {
      best_val = val_loss;
      have_best = true;
      since_best = 0;
      result.best = make_checkpoint(params, adam, mcfg, vocab.hash());
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline std::string history_tsv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
  char buf[160];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%d\t%.12g\t%.12g\t%.12g\t%.12g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out += buf;
  }
  return out;
}

namespace detail {

inline void put_u64_le(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string config_block(const Checkpoint& ckpt) {
  std::ostringstream os;
  const ModelConfig& m = ckpt.config;
  os << "cell = " << cell_name(m.cell) << '\n'
     << "attention = " << (m.attention ? "on" : "off") << '\n'
     << "d_feat = " << m.d_feat << '\n'
     << "t_enc = " << m.t_enc << '\n'
     << "d_h = " << m.d_h << '\n'
     << "d_emb = " << m.d_emb << '\n'
     << "vocab_size = " << m.vocab_size << '\n'
     << "t_dec_max = " << m.t_dec_max << '\n'
     << "seed = " << m.seed << '\n'
     << "adam_step = " << ckpt.adam_step << '\n'
     << "vocab_hash = " << ckpt.vocab_hash << '\n';
  return os.str();
}

inline void parse_config_block(const std::string& text, Checkpoint& ckpt) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    ModelConfig& m = ckpt.config;
    if (key == "cell") {
      if (val != "lstm" && val != "gru") throw FormatError("checkpoint: unknown cell " + val);
      m.cell = val == "lstm" ? CellKind::Lstm : CellKind::Gru;
    } else if (key == "attention") {
      m.attention = val == "on";
    } else if (key == "d_feat") m.d_feat = std::stoi(val);
    else if (key == "t_enc") m.t_enc = std::stoi(val);
    else if (key == "d_h") m.d_h = std::stoi(val);
    else if (key == "d_emb") m.d_emb = std::stoi(val);
    else if (key == "vocab_size") m.vocab_size = std::stoi(val);
    else if (key == "t_dec_max") m.t_dec_max = std::stoi(val);
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "adam_step") ckpt.adam_step = std::stoll(val);
    else if (key == "vocab_hash") ckpt.vocab_hash = std::stoull(val);
    else throw FormatError("checkpoint: unknown config key " + key);
  }
}

}  // namespace detail

// Layout: "VCKP" | version u32 LE | config length u32 LE + UTF-8 bytes | then
// (name length u32, name, rank u32, dims u32..., f64 LE payload) records
// until end of file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf = "VCKP";
  detail::put_u32_le(buf, ckpt.version);
  const std::string config = detail::config_block(ckpt);
  detail::put_u32_le(buf, static_cast<std::uint32_t>(config.size()));
  buf += config;
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_u32_le(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_u32_le(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32_le(buf, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail::put_u64_le(buf, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_checkpoint: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("save_checkpoint: short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw FormatError(path.string() + ": truncated " + what + " at byte " + std::to_string(pos));
  };
  need(4, "magic");
  if (bytes.compare(0, 4, "VCKP") != 0) throw FormatError(path.string() + ": bad magic at byte 0");
  pos = 4;
  Checkpoint ckpt;
  need(4, "version");
  ckpt.version = detail::get_u32_le(p + pos);
  pos += 4;
  if (ckpt.version != 1)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(ckpt.version));
  need(4, "config length");
  const std::uint32_t config_len = detail::get_u32_le(p + pos);
  pos += 4;
  need(config_len, "config block");
  detail::parse_config_block(bytes.substr(pos, config_len), ckpt);
  pos += config_len;
  while (pos < bytes.size()) {
    need(4, "tensor name length");
    const std::uint32_t name_len = detail::get_u32_le(p + pos);
    pos += 4;
    need(name_len, "tensor name");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    need(4, "tensor rank");
    const std::uint32_t rank = detail::get_u32_le(p + pos);
    pos += 4;
    if (rank == 0 || rank > 8)
      throw FormatError(path.string() + ": implausible rank " + std::to_string(rank) +
                        " at byte " + std::to_string(pos - 4));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      need(4, "tensor dims");
      shape.push_back(static_cast<int>(detail::get_u32_le(p + pos)));
      pos += 4;
      count *= static_cast<std::size_t>(shape.back());
    }
    need(count * 8, "tensor payload");
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<double>(detail::get_u64_le(p + pos + i * 8));
    pos += count * 8;
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace vidcap
