#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dettoy/model.hpp"

namespace dettoy {

enum class Component { QueryEmbeddings, ReferencePoints, EncoderMhsa, DecoderMhsa, DecoderMhca };
enum class Granularity { Scalar, HeadSubunit };

std::string to_string(Component c);
Component component_from_string(const std::string& name);
std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& name);

/// The granularity a component is ablated at: scalars for query tables, head subunits
/// for attention projections.
Granularity natural_granularity(Component c);
/// True for components that live in a block stack (encoder or decoder attention).
bool is_blockwise(Component c);

struct AblationSpec {
  Component component = Component::EncoderMhsa;
  double percentage = 0.0;
  std::optional<int> block;  ///< nullopt: all blocks
  Granularity granularity = Granularity::HeadSubunit;
  std::uint64_t seed = 0;

  static AblationSpec make(Component component, double percentage, std::optional<int> block,
                           std::uint64_t seed);

  /// Throws InvalidArgument if the spec is malformed or not applicable to `cfg`.
  void validate(const ModelConfig& cfg) const;

  friend bool operator==(const AblationSpec&, const AblationSpec&) = default;
};

/// One ablation unit. For head subunits `index` is the head and the unit covers columns
/// [index*d_h, (index+1)*d_h) of `row`; for scalars `index` is the column.
struct Subunit {
  std::string path;
  int row = 0;
  int index = 0;

  friend bool operator==(const Subunit&, const Subunit&) = default;
  friend auto operator<=>(const Subunit&, const Subunit&) = default;
};

struct AblationMask {
  AblationSpec spec;
  int width = 1;  ///< columns per entry: d_h for head subunits, 1 for scalars
  std::vector<Subunit> entries;

  std::size_t subunit_count() const { return entries.size(); }
  friend bool operator==(const AblationMask&, const AblationMask&) = default;
};

/// Parameter tables a component addresses, in canonical order (block, then W_q < W_k < W_v).
std::vector<std::string> target_tables(const ModelConfig& cfg, const AblationSpec& spec);

/// Every ablation unit of the targeted component in canonical order.
std::vector<Subunit> enumerate_subunits(const Model& model, const AblationSpec& spec);

/// floor(p * n + 1/2): round half up.
std::size_t ablation_count(double percentage, std::size_t n);

/// Uniform sample without replacement of ablation_count(p, N) units, seeded only by
/// spec.seed. Entries come back in canonical order.
AblationMask sample_mask(const Model& model, const AblationSpec& spec);

/// Throws InvalidArgument unless every entry addresses cells inside `params` and
/// head-subunit entries are head-aligned and unique.
void check_mask(const ParameterStore& params, const AblationMask& mask);

/// Zeroes the mask's cells in place without keeping originals (for throwaway snapshots).
void zero_cells(ParameterStore& params, const AblationMask& mask);

/// Reversible ablation. Holds the model's exclusive lock until restored or destroyed.
class AblationHandle {
 public:
  AblationHandle(AblationHandle&& other) noexcept;
  AblationHandle& operator=(AblationHandle&&) = delete;
  AblationHandle(const AblationHandle&) = delete;
  ~AblationHandle();

  const AblationMask& mask() const { return mask_; }
  bool active() const { return model_ != nullptr; }
  /// Writes back every saved value and releases the lock. Idempotent.
  void restore();

 private:
  friend AblationHandle apply(Model& model, const AblationMask& mask);
  AblationHandle(Model& model, AblationMask mask);

  Model* model_;
  AblationMask mask_;
  std::vector<double> saved_;
};

/// Zeroes the masked cells and returns the handle that undoes it. Throws
/// ContractViolation if the model is already held by another apply or by training.
AblationHandle apply(Model& model, const AblationMask& mask);

/// Fraction of entries with |v| <= threshold. Throws InvalidArgument for an empty table
/// or a non-positive threshold.
double measure_sparsity(const ad::Matrix& table, double threshold = 0.05);

nlohmann::json to_json(const AblationSpec& spec);
AblationSpec ablation_spec_from_json(const nlohmann::json& doc);
/// Entries serialize as [path, row, index] triples.
nlohmann::json to_json(const AblationMask& mask);
AblationMask ablation_mask_from_json(const nlohmann::json& doc);

}  // namespace dettoy
