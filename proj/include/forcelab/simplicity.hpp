#pragma once

#include "forcelab/datasets.hpp"
#include "forcelab/mathcore.hpp"

#include <optional>
#include <string>

namespace forcelab::simplicity {

/// Huffman code lengths for a positive frequency table. A single-symbol
/// alphabet costs one bit per occurrence.
std::vector<int> huffman_code_lengths(const std::vector<int>& freqs);

/// A mapping written as one rule application per (object, output bit), in
/// object-major order. Applications of a shared rule repeat the same token,
/// so structured mappings compress better under the Huffman code.
struct MappingDescription {
  std::vector<std::string> tokens;  // 8 rule tokens for the 4-object case
  int reuse_count = 0;              // token occurrences minus distinct tokens
};

struct EncodedMapping {
  MappingDescription description;
  double bits = 0.0;
};

EncodedMapping describe_and_encode(const datasets::MappingSpec& mapping);

/// Reconstructs the object-to-code assignment from its description.
std::array<int, 4> decode_description(const MappingDescription& description);

struct KcBounds {
  double bijection_bound = 0.0;  // v^m * m * log2(v)
  double comp_bound = 0.0;       // v log2 v + m log2 m
  double gamma = 0.0;            // ratio of the two
};

KcBounds kc_bounds(int m, int v);

/// Spearman correlation between pairwise Hamming distances in the
/// generating-factor space and in the representation space.
double topsim(const std::vector<std::vector<int>>& g_points,
              const std::vector<std::vector<int>>& z_points);

std::optional<double> topsim_of_mapping(const datasets::MappingSpec& mapping);

// ---------------------------------------------------------------------------
// The 256-mapping learning-speed study.

enum class Toy256Encoding { kOht2, kOht3 };
enum class Toy256Loss { kCe, kMse };
enum class Toy256Optimizer { kSgd, kAdam };

struct Toy256Config {
  Toy256Encoding encoding = Toy256Encoding::kOht2;
  Toy256Loss loss = Toy256Loss::kCe;
  Toy256Optimizer optimizer = Toy256Optimizer::kSgd;
  int seeds = 1;
  std::uint64_t base_seed = 0;
  int projected_dim = 16;   // width of the shared random input projection
  int hidden_width = 128;
  int hidden_layers = 3;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  int epoch_cap = 2000;
  double convergence_loss = 1e-3;
  int jobs = 1;
  bool keep_curves = false;
};

struct ExperimentRecord {
  int mapping_id = 0;
  datasets::MappingClass cls = datasets::MappingClass::kOther;
  double convergence_time = 0.0;  // area under the training-loss curve
  double coding_bits = 0.0;
  std::optional<double> topsim;   // undefined for all-equal codes
  std::uint64_t seed = 0;
  bool diverged = false;
};

struct Toy256Result {
  std::vector<ExperimentRecord> records;  // 256 per seed, ordered by (seed, mapping id)
  std::vector<std::vector<double>> curves;  // per record, when keep_curves is set
  Correlation cl_vs_time;                 // over all non-diverged records
  Correlation topsim_vs_time;             // over records with defined topsim
  int topsim_excluded = 0;
  int diverged_runs = 0;
  double mean_time_compositional = 0.0;
  double mean_time_holistic = 0.0;
  double mean_time_degenerate = 0.0;
  bool degenerate_fastest_every_seed = false;
  bool compositional_faster_every_seed = false;
};

/// Encoded inputs for the four objects under the shared projection.
Matrix toy256_inputs(Toy256Encoding encoding, const Matrix& projection);
Matrix toy256_projection(Toy256Encoding encoding, int projected_dim, std::uint64_t seed);

Toy256Result run_toy256(const Toy256Config& config);

}  // namespace forcelab::simplicity
