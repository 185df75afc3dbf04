#include "forcelab/simplicity.hpp"

#include "forcelab/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <queue>
#include <thread>

namespace forcelab::simplicity {

std::vector<int> huffman_code_lengths(const std::vector<int>& freqs) {
  require(!freqs.empty(), "huffman_code_lengths: empty table");
  for (int f : freqs) require(f > 0, "huffman_code_lengths: frequencies must be positive");
  const std::size_t n = freqs.size();
  if (n == 1) return {1};

  // Nodes beyond n-1 are internal; parent links give depths afterwards.
  std::vector<int> parent(2 * n - 1, -1);
  using Node = std::pair<long, std::size_t>;  // (weight, node id); id breaks ties
  std::priority_queue<Node, std::vector<Node>, std::greater<>> heap;
  for (std::size_t i = 0; i < n; ++i) heap.emplace(freqs[i], i);
  std::size_t next_id = n;
  while (heap.size() > 1) {
    const Node a = heap.top();
    heap.pop();
    const Node b = heap.top();
    heap.pop();
    parent[a.second] = static_cast<int>(next_id);
    parent[b.second] = static_cast<int>(next_id);
    heap.emplace(a.first + b.first, next_id);
    ++next_id;
  }
  std::vector<int> lengths(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int depth = 0;
    for (int p = parent[i]; p != -1; p = parent[static_cast<std::size_t>(p)]) ++depth;
    lengths[i] = depth;
  }
  return lengths;
}

namespace {

constexpr int kNumObjects = 4;
constexpr int kNumBits = 2;

int object_attr(int object, int attr) { return attr == 0 ? object / 2 : object % 2; }

// Rule detection per output bit: constant, a function of one attribute, or a
// per-object enumeration.
struct BitRule {
  enum Kind { kConst, kAttr, kEnum } kind = kEnum;
  int attr = -1;
};

BitRule detect_rule(const std::array<int, 4>& codes, int bit) {
  const int b0 = datasets::mapping_code_bit(codes[0], bit);
  bool constant = true;
  for (int o = 1; o < kNumObjects; ++o) {
    if (datasets::mapping_code_bit(codes[static_cast<std::size_t>(o)], bit) != b0) constant = false;
  }
  if (constant) return {BitRule::kConst, -1};
  for (int attr = 0; attr < 2; ++attr) {
    int per_value[2] = {-1, -1};
    bool ok = true;
    for (int o = 0; o < kNumObjects && ok; ++o) {
      const int v = object_attr(o, attr);
      const int b = datasets::mapping_code_bit(codes[static_cast<std::size_t>(o)], bit);
      if (per_value[v] == -1) {
        per_value[v] = b;
      } else if (per_value[v] != b) {
        ok = false;
      }
    }
    if (ok && per_value[0] != per_value[1]) return {BitRule::kAttr, attr};
  }
  return {BitRule::kEnum, -1};
}

}  // namespace

EncodedMapping describe_and_encode(const datasets::MappingSpec& mapping) {
  std::array<BitRule, kNumBits> rules;
  for (int bit = 0; bit < kNumBits; ++bit) {
    rules[static_cast<std::size_t>(bit)] = detect_rule(mapping.codes, bit);
  }

  EncodedMapping out;
  for (int object = 0; object < kNumObjects; ++object) {
    for (int bit = 0; bit < kNumBits; ++bit) {
      const BitRule& rule = rules[static_cast<std::size_t>(bit)];
      const int b = datasets::mapping_code_bit(mapping.codes[static_cast<std::size_t>(object)], bit);
      std::string token = "d" + std::to_string(bit) + ":";
      switch (rule.kind) {
        case BitRule::kConst:
          token += "*->" + std::to_string(b);
          break;
        case BitRule::kAttr:
          token += "a" + std::to_string(rule.attr) + "=" +
                   std::to_string(object_attr(object, rule.attr)) + "->" + std::to_string(b);
          break;
        case BitRule::kEnum:
          token += "o" + std::to_string(object) + "->" + std::to_string(b);
          break;
      }
      out.description.tokens.push_back(std::move(token));
    }
  }

  std::map<std::string, int> freq;
  for (const auto& t : out.description.tokens) ++freq[t];
  std::vector<int> counts;
  std::map<std::string, std::size_t> symbol_index;
  for (const auto& [token, count] : freq) {
    symbol_index[token] = counts.size();
    counts.push_back(count);
  }
  const std::vector<int> lengths = huffman_code_lengths(counts);
  for (const auto& t : out.description.tokens) {
    out.bits += lengths[symbol_index[t]];
  }
  out.description.reuse_count =
      static_cast<int>(out.description.tokens.size()) - static_cast<int>(freq.size());
  return out;
}

std::array<int, 4> decode_description(const MappingDescription& description) {
  require(description.tokens.size() == kNumObjects * kNumBits,
          "decode_description: unexpected token count");
  std::array<int, 4> codes{};
  std::size_t pos = 0;
  for (int object = 0; object < kNumObjects; ++object) {
    int code = 0;
    for (int bit = 0; bit < kNumBits; ++bit) {
      const std::string& token = description.tokens[pos++];
      require(!token.empty() && token.front() == 'd', "decode_description: malformed token");
      const int b = token.back() - '0';
      require(b == 0 || b == 1, "decode_description: malformed bit");
      code = 2 * code + b;
    }
    codes[static_cast<std::size_t>(object)] = code;
  }
  return codes;
}

KcBounds kc_bounds(int m, int v) {
  require(m >= 2 && v >= 2, "kc_bounds: m,v >= 2");
  KcBounds out;
  out.bijection_bound = std::pow(static_cast<double>(v), m) * m * std::log2(static_cast<double>(v));
  out.comp_bound = v * std::log2(static_cast<double>(v)) + m * std::log2(static_cast<double>(m));
  out.gamma = out.bijection_bound / out.comp_bound;
  return out;
}

namespace {

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

double topsim(const std::vector<std::vector<int>>& g_points,
              const std::vector<std::vector<int>>& z_points) {
  require(g_points.size() == z_points.size(), "topsim: aligned point sets required");
  require(g_points.size() >= 3, "topsim: need at least 3 points");
  std::vector<double> dg, dz;
  for (std::size_t i = 0; i < g_points.size(); ++i) {
    for (std::size_t j = i + 1; j < g_points.size(); ++j) {
      dg.push_back(hamming(g_points[i], g_points[j]));
      dz.push_back(hamming(z_points[i], z_points[j]));
    }
  }
  const auto n = static_cast<Eigen::Index>(dg.size());
  return spearman(Eigen::Map<Vector>(dg.data(), n), Eigen::Map<Vector>(dz.data(), n)).rho;
}

std::optional<double> topsim_of_mapping(const datasets::MappingSpec& mapping) {
  std::vector<std::vector<int>> g, z;
  for (int object = 0; object < kNumObjects; ++object) {
    g.push_back({object_attr(object, 0), object_attr(object, 1)});
    const int code = mapping.codes[static_cast<std::size_t>(object)];
    z.push_back({datasets::mapping_code_bit(code, 0), datasets::mapping_code_bit(code, 1)});
  }
  try {
    return topsim(g, z);
  } catch (const std::domain_error&) {
    return std::nullopt;  // constant distance vector
  }
}

Matrix toy256_projection(Toy256Encoding encoding, int projected_dim, std::uint64_t seed) {
  const int raw_dim = encoding == Toy256Encoding::kOht2 ? 4 : 6;
  Rng rng(derive_seed(seed, 0x70726f6a));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
  return Matrix::NullaryExpr(raw_dim, projected_dim, [&]() { return scale * normal(rng); });
}

Matrix toy256_inputs(Toy256Encoding encoding, const Matrix& projection) {
  const int block = encoding == Toy256Encoding::kOht2 ? 2 : 3;
  Matrix raw = Matrix::Zero(kNumObjects, 2 * block);
  for (int object = 0; object < kNumObjects; ++object) {
    raw(object, object_attr(object, 0)) = 1.0;
    raw(object, block + object_attr(object, 1)) = 1.0;
  }
  require(projection.rows() == raw.cols(), "toy256_inputs: projection shape mismatch");
  return raw * projection;
}

namespace {

ExperimentRecord run_single_mapping(const datasets::MappingSpec& mapping, const Matrix& inputs,
                                    const MlpModel& init, const Toy256Config& config,
                                    std::uint64_t seed, std::vector<double>* curve_out) {
  training::TrainData data;
  data.x = inputs;
  for (int object = 0; object < kNumObjects; ++object) {
    data.labels.push_back(mapping.codes[static_cast<std::size_t>(object)]);
  }

  training::TrainConfig tc;
  tc.eta = config.learning_rate;
  tc.weight_decay = config.weight_decay;
  tc.epochs = config.epoch_cap;
  tc.batch_size = kNumObjects;
  tc.optimizer = config.optimizer == Toy256Optimizer::kSgd ? training::Optimizer::kSgd
                                                           : training::Optimizer::kAdam;
  tc.loss = config.loss == Toy256Loss::kCe ? training::LossKind::kCrossEntropy
                                           : training::LossKind::kMseProb;
  tc.head_groups = 2;
  tc.seed = derive_seed(seed, static_cast<std::uint64_t>(mapping.id));

  ExperimentRecord record;
  record.mapping_id = mapping.id;
  record.cls = mapping.cls;
  record.coding_bits = describe_and_encode(mapping).bits;
  record.topsim = topsim_of_mapping(mapping);
  record.seed = seed;

  std::vector<double> curve;
  try {
    MlpModel model = init;
    training::AdamState adam;
    const Matrix targets = training::target_rows(data, model.output_dim(), tc.head_groups);
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
      ForwardCache cache;
      const Matrix z = model.forward_batch(data.x, cache);
      Matrix dz;
      const double loss = training::loss_and_grad(tc.loss, tc.head_groups, z, targets, &dz);
      if (!std::isfinite(loss)) throw DivergenceError("toy256: non-finite loss");
      curve.push_back(loss);
      if (loss < config.convergence_loss) break;
      const Vector grad = model.backward_batch(cache, dz / static_cast<double>(kNumObjects));
      training::apply_update(model, grad, tc, &adam);
    }
  } catch (const DivergenceError&) {
    record.diverged = true;
    return record;
  }
  // Converged runs hold their last loss to the cap so areas stay comparable.
  const double tail = curve.back();
  while (static_cast<int>(curve.size()) < config.epoch_cap) curve.push_back(tail);
  record.convergence_time = training::convergence_time(curve);
  if (curve_out) *curve_out = std::move(curve);
  return record;
}

void parallel_for(int jobs, int n, const std::function<void(int)>& body) {
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

Toy256Result run_toy256(const Toy256Config& config) {
  require(config.seeds >= 1, "run_toy256: seeds >= 1");
  const auto mappings = datasets::enumerate_mappings();

  Toy256Result result;
  result.records.resize(static_cast<std::size_t>(256 * config.seeds));
  if (config.keep_curves) result.curves.resize(result.records.size());
  result.degenerate_fastest_every_seed = true;
  result.compositional_faster_every_seed = true;

  for (int s = 0; s < config.seeds; ++s) {
    const std::uint64_t seed = derive_seed(config.base_seed, static_cast<std::uint64_t>(s));
    // One shared initialization and projection across all 256 runs.
    const Matrix projection = toy256_projection(config.encoding, config.projected_dim, seed);
    const Matrix inputs = toy256_inputs(config.encoding, projection);
    std::vector<int> dims{config.projected_dim};
    for (int l = 0; l < config.hidden_layers; ++l) dims.push_back(config.hidden_width);
    dims.push_back(4);
    Rng init_rng(derive_seed(seed, 0x696e6974));
    const MlpModel init = MlpModel::random(dims, Activation::kTanh, init_rng);

    parallel_for(config.jobs, 256, [&](int m) {
      const auto slot = static_cast<std::size_t>(s * 256 + m);
      result.records[slot] =
          run_single_mapping(mappings[static_cast<std::size_t>(m)], inputs, init, config, seed,
                             config.keep_curves ? &result.curves[slot] : nullptr);
    });

    // Per-seed class comparisons.
    double comp = 0.0, holi = 0.0, degen = 0.0, fastest_other = std::numeric_limits<double>::max();
    double slowest_degen = 0.0;
    int n_comp = 0, n_holi = 0, n_degen = 0;
    for (int m = 0; m < 256; ++m) {
      const auto& r = result.records[static_cast<std::size_t>(s * 256 + m)];
      if (r.diverged) continue;
      switch (r.cls) {
        case datasets::MappingClass::kCompositional:
          comp += r.convergence_time;
          ++n_comp;
          break;
        case datasets::MappingClass::kHolistic:
          holi += r.convergence_time;
          ++n_holi;
          break;
        case datasets::MappingClass::kDegenerate:
          degen += r.convergence_time;
          ++n_degen;
          slowest_degen = std::max(slowest_degen, r.convergence_time);
          break;
        case datasets::MappingClass::kOther:
          break;
      }
      if (r.cls != datasets::MappingClass::kDegenerate) {
        fastest_other = std::min(fastest_other, r.convergence_time);
      }
    }
    if (n_comp > 0 && n_holi > 0 && !(comp / n_comp < holi / n_holi)) {
      result.compositional_faster_every_seed = false;
    }
    if (!(slowest_degen < fastest_other)) result.degenerate_fastest_every_seed = false;
    result.mean_time_compositional += n_comp ? comp / n_comp : 0.0;
    result.mean_time_holistic += n_holi ? holi / n_holi : 0.0;
    result.mean_time_degenerate += n_degen ? degen / n_degen : 0.0;
  }
  result.mean_time_compositional /= config.seeds;
  result.mean_time_holistic /= config.seeds;
  result.mean_time_degenerate /= config.seeds;

  std::vector<double> cl, time_for_cl, ts, time_for_ts;
  for (const auto& r : result.records) {
    if (r.diverged) {
      ++result.diverged_runs;
      continue;
    }
    cl.push_back(r.coding_bits);
    time_for_cl.push_back(r.convergence_time);
    if (r.topsim) {
      ts.push_back(*r.topsim);
      time_for_ts.push_back(r.convergence_time);
    } else {
      ++result.topsim_excluded;
    }
  }
  const auto as_vec = [](std::vector<double>& v) {
    return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  };
  result.cl_vs_time = spearman(as_vec(cl), as_vec(time_for_cl));
  result.topsim_vs_time = spearman(as_vec(ts), as_vec(time_for_ts));
  return result;
}

}  // namespace forcelab::simplicity
