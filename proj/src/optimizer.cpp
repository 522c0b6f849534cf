#include "orefeed/optimizer.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "orefeed/common.hpp"
#include "orefeed/parallel.hpp"
#include "orefeed/random.hpp"

namespace orefeed::optim {

void TrainConfig::validate() const {
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr_factor must lie in (0, 1)");
  if (!(lr_min > 0.0) || lr_min > lr_init) throw ConfigError("need 0 < lr_min <= lr_init");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr_init", cfg.lr_init},
          {"momentum", cfg.momentum},
          {"lr_factor", cfg.lr_factor},
          {"plateau_patience", cfg.plateau_patience},
          {"lr_min", cfg.lr_min},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"early_stop_patience", cfg.early_stop_patience},
          {"seed", cfg.seed},
          {"augment", cfg.augment}};
}

nlohmann::json to_json(const EpochRecord& rec) {
  return {{"epoch", rec.epoch},
          {"train_loss", rec.train_loss},
          {"val_accuracy", rec.val_accuracy},
          {"lr", rec.lr}};
}

void write_history_jsonl(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& rec : history.epochs) out << to_json(rec).dump() << '\n';
}

void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr,
              double momentum) {
  if (!params.same_layout(grads) || !params.same_layout(velocity)) {
    throw ShapeError("sgd_step: params, grads and state must share one layout");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (const double g : grads[t].values) {
      if (!std::isfinite(g)) throw Error("sgd_step: non-finite gradient in tensor " + grads[t].name);
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].values;
    auto& v = velocity[t].values;
    const auto& g = grads[t].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

double plateau_schedule(const TrainHistory& history, const TrainConfig& cfg) {
  if (history.epochs.empty()) return cfg.lr_init;
  double best = -1.0;
  int wait = 0;
  bool reduce_now = false;
  for (const auto& rec : history.epochs) {
    reduce_now = false;
    if (rec.val_accuracy > best) {
      best = rec.val_accuracy;
      wait = 0;
    } else if (++wait >= cfg.plateau_patience) {
      reduce_now = true;
      wait = 0;
    }
  }
  const double lr = history.epochs.back().lr;
  return reduce_now ? std::max(lr * cfg.lr_factor, cfg.lr_min) : lr;
}

double accuracy(const Trainable& model, std::span<const std::size_t> ids) {
  require(!ids.empty(), "accuracy: empty example set");
  std::vector<char> hit(ids.size(), 0);
  parallel_for(ids.size(), [&](std::size_t i) {
    hit[i] = model.predict(ids[i]) == model.label(ids[i]) ? 1 : 0;
  });
  std::size_t n = 0;
  for (const char h : hit) n += static_cast<std::size_t>(h);
  return static_cast<double>(n) / static_cast<double>(ids.size());
}

TrainHistory train(Trainable& model, std::span<const std::size_t> train_ids,
                   std::span<const std::size_t> val_ids, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  require(!train_ids.empty(), "train: empty training set");
  require(!val_ids.empty(), "train: empty validation set");

  ParamSet& params = model.params();
  ParamSet velocity = params.zeros_like();
  ParamSet best_params = params;
  TrainHistory history;
  std::vector<std::size_t> order(train_ids.begin(), train_ids.end());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<ParamSet> slot_grads;
  std::vector<double> slot_loss(batch);
  double lr = cfg.lr_init;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x5eedULL, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_no) {
      const std::size_t n = std::min(batch, order.size() - start);
      if (slot_grads.size() < n) slot_grads.resize(n, params.zeros_like());
      parallel_for(n, [&](std::size_t i) {
        slot_grads[i].set_zero();
        const std::size_t id = order[start + i];
        std::optional<std::uint64_t> aug;
        if (cfg.augment) aug = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), id);
        slot_loss[i] = model.loss_grad(id, aug, slot_grads[i]);
      });
      // Fixed-order reduction keeps results independent of the worker count.
      ParamSet grad = slot_grads[0];
      double batch_loss = slot_loss[0];
      for (std::size_t i = 1; i < n; ++i) {
        grad.add_scaled(slot_grads[i], 1.0);
        batch_loss += slot_loss[i];
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingAbort("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      }
      grad.scale(1.0 / static_cast<double>(n));
      sgd_step(params, grad, velocity, lr, cfg.momentum);
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_accuracy = accuracy(model, val_ids);
    rec.lr = lr;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_accuracy > history.best_val_accuracy) {
      history.best_val_accuracy = rec.val_accuracy;
      history.best_epoch = epoch;
      best_params = params;
    }
    if (epoch - history.best_epoch >= cfg.early_stop_patience) {
      history.early_stopped = true;
      break;
    }
    lr = plateau_schedule(history, cfg);
  }
  params = best_params;
  return history;
}

GradCheckResult grad_check(Trainable& model, std::size_t example, double eps,
                           std::size_t max_params, std::uint64_t seed) {
  require(eps > 0.0, "grad_check: eps must be positive");
  require(max_params > 0, "grad_check: need at least one parameter to check");
  ParamSet& params = model.params();
  ParamSet analytic = params.zeros_like();
  model.loss_grad(example, std::nullopt, analytic);
  ParamSet scratch = params.zeros_like();
  auto loss_at = [&] {
    scratch.set_zero();
    return model.loss_grad(example, std::nullopt, scratch);
  };

  // Spread the budget evenly over tensors; small tensors donate leftovers.
  std::vector<std::size_t> quota(params.size(), 0);
  std::size_t budget = max_params;
  std::size_t open = params.size();
  std::vector<std::size_t> by_size(params.size());
  for (std::size_t t = 0; t < params.size(); ++t) by_size[t] = t;
  std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) {
    return params[a].size() < params[b].size();
  });
  for (const std::size_t t : by_size) {
    const std::size_t share = budget / open;
    quota[t] = std::min(share, params[t].size());
    budget -= quota[t];
    --open;
  }

  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<std::size_t> idx(params[t].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(quota[t]);
    for (const std::size_t i : idx) {
      double& p = params[t].values[i];
      const double orig = p;
      p = orig + eps;
      const double up = loss_at();
      p = orig - eps;
      const double down = loss_at();
      p = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t].values[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = params[t].name;
      }
    }
  }
  return result;
}

namespace {

constexpr char kMagic[8] = {'O', 'R', 'F', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw IntegrityError("checkpoint truncated");
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::string_view span_from(std::size_t start) const {
    return std::string_view(data_.data() + start, pos_ - start);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ParamSet& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"model", meta.model},
                                 {"config", meta.config},
                                 {"class_vocab", meta.class_vocab},
                                 {"rng_seed", meta.rng_seed},
                                 {"extra", meta.extra}};
  const std::string header_text = header.dump();
  std::string buf(kMagic, sizeof kMagic);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(header_text.size()));
  buf += header_text;
  put_u32(buf, crc(header_text));
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) {
    const std::size_t start = buf.size();
    put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    buf.push_back(static_cast<char>(kDtypeF64));
    put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) put_u64(buf, d);
    for (const double v : t.values) put_u64(buf, std::bit_cast<std::uint64_t>(v));
    put_u32(buf, crc(std::string_view(buf).substr(start)));
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::pair<ParamSet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw IntegrityError(path.string() + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const std::string_view header_text = r.take(r.u32());
  if (crc(header_text) != r.u32()) throw IntegrityError(path.string() + ": header checksum mismatch");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": unreadable header: " + e.what());
  }
  CheckpointMeta meta;
  meta.model = header.at("model").get<std::string>();
  meta.config = header.at("config");
  meta.class_vocab = header.at("class_vocab");
  meta.rng_seed = header.at("rng_seed").get<std::uint64_t>();
  meta.extra = header.at("extra");

  ParamSet params;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = r.pos();
    std::string name(r.take(r.u32()));
    const auto dtype = static_cast<std::uint8_t>(r.take(1)[0]);
    if (dtype != kDtypeF64) throw IntegrityError(path.string() + ": unknown dtype for " + name);
    const std::uint32_t ndims = r.u32();
    std::vector<std::size_t> shape(ndims);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      if (d != 0 && n > (std::size_t{1} << 40) / d) throw IntegrityError(path.string() + ": bad shape");
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    const std::string_view record = r.span_from(start);
    if (crc(record) != r.u32()) {
      throw IntegrityError(path.string() + ": checksum mismatch in tensor " + name);
    }
    const std::size_t idx = params.add(name, shape);
    params[idx].values = std::move(values);
  }
  if (!r.done()) throw IntegrityError(path.string() + ": trailing bytes after last tensor");
  return {std::move(params), std::move(meta)};
}

}  // namespace orefeed::optim
