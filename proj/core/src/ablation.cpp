#include "dettoy/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dettoy/error.hpp"
#include "dettoy/random.hpp"

namespace dettoy {

std::string to_string(Component c) {
  switch (c) {
    case Component::QueryEmbeddings: return "query_embeddings";
    case Component::ReferencePoints: return "reference_points";
    case Component::EncoderMhsa: return "encoder_mhsa";
    case Component::DecoderMhsa: return "decoder_mhsa";
    case Component::DecoderMhca: return "decoder_mhca";
  }
  return "?";
}

Component component_from_string(const std::string& name) {
  for (Component c : {Component::QueryEmbeddings, Component::ReferencePoints,
                      Component::EncoderMhsa, Component::DecoderMhsa, Component::DecoderMhca}) {
    if (to_string(c) == name) return c;
  }
  throw InvalidArgument("unknown component '" + name + "'");
}

std::string to_string(Granularity g) {
  return g == Granularity::Scalar ? "scalar" : "head_subunit";
}

Granularity granularity_from_string(const std::string& name) {
  if (name == "scalar") return Granularity::Scalar;
  if (name == "head_subunit") return Granularity::HeadSubunit;
  throw InvalidArgument("unknown granularity '" + name + "'");
}

Granularity natural_granularity(Component c) {
  return is_blockwise(c) ? Granularity::HeadSubunit : Granularity::Scalar;
}

bool is_blockwise(Component c) {
  return c == Component::EncoderMhsa || c == Component::DecoderMhsa ||
         c == Component::DecoderMhca;
}

AblationSpec AblationSpec::make(Component component, double percentage,
                                std::optional<int> block, std::uint64_t seed) {
  return {component, percentage, block, natural_granularity(component), seed};
}

namespace {

int stack_size(const ModelConfig& cfg, Component c) {
  return c == Component::EncoderMhsa ? cfg.encoder_blocks : cfg.decoder_blocks;
}

}  // namespace

void AblationSpec::validate(const ModelConfig& cfg) const {
  if (!(percentage >= 0.0 && percentage <= 1.0)) {
    throw InvalidArgument("ablation percentage must lie in [0, 1]");
  }
  if (granularity != natural_granularity(component)) {
    throw InvalidArgument(to_string(component) + " is ablated at " +
                          to_string(natural_granularity(component)) + " granularity");
  }
  if (component == Component::ReferencePoints && cfg.variant != Variant::DdetrMini) {
    throw InvalidArgument("reference_points exist only in ddetr_mini, not " +
                          to_string(cfg.variant));
  }
  if (block) {
    if (!is_blockwise(component)) {
      throw InvalidArgument(to_string(component) + " has no blocks; use all_blocks scope");
    }
    const int n = stack_size(cfg, component);
    if (*block < 0 || *block >= n) {
      throw InvalidArgument("block " + std::to_string(*block) + " out of range for " +
                            to_string(component) + " (" + std::to_string(n) + " blocks)");
    }
  }
}

std::vector<std::string> target_tables(const ModelConfig& cfg, const AblationSpec& spec) {
  spec.validate(cfg);
  switch (spec.component) {
    case Component::QueryEmbeddings: return {Model::content_query_path()};
    case Component::ReferencePoints:
      return {"decoder.query.positional", "decoder.reference_point_head.W"};
    default: break;
  }
  const bool encoder = spec.component == Component::EncoderMhsa;
  const char* stack = encoder ? "encoder" : "decoder";
  const char* layer = spec.component == Component::DecoderMhca ? "mhca" : "mhsa";
  const bool value_only = spec.component != Component::DecoderMhsa && cfg.deformable();
  std::vector<std::string> tables;
  const int n = stack_size(cfg, spec.component);
  for (int b = 0; b < n; ++b) {
    if (spec.block && *spec.block != b) continue;
    const std::string prefix =
        std::string(stack) + ".block" + std::to_string(b) + "." + layer + ".";
    if (!value_only) {
      tables.push_back(prefix + "W_q");
      tables.push_back(prefix + "W_k");
    }
    tables.push_back(prefix + "W_v");
  }
  return tables;
}

std::vector<Subunit> enumerate_subunits(const Model& model, const AblationSpec& spec) {
  const ModelConfig& cfg = model.config();
  std::vector<Subunit> units;
  const int dh = cfg.head_dim();
  for (const auto& path : target_tables(cfg, spec)) {
    const ad::Matrix& m = model.parameters().at(path);
    const int per_row = spec.granularity == Granularity::HeadSubunit
                            ? static_cast<int>(m.cols()) / dh
                            : static_cast<int>(m.cols());
    for (int r = 0; r < m.rows(); ++r) {
      for (int i = 0; i < per_row; ++i) units.push_back({path, r, i});
    }
  }
  return units;
}

std::size_t ablation_count(double percentage, std::size_t n) {
  // The epsilon keeps products like 0.15 * 20 = 2.9999999999999996 from rounding down.
  return static_cast<std::size_t>(std::floor(percentage * static_cast<double>(n) + 0.5 + 1e-9));
}

AblationMask sample_mask(const Model& model, const AblationSpec& spec) {
  std::vector<Subunit> pool = enumerate_subunits(model, spec);
  const std::size_t k = std::min(pool.size(), ablation_count(spec.percentage, pool.size()));
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  AblationMask mask;
  mask.spec = spec;
  mask.width = spec.granularity == Granularity::HeadSubunit ? model.config().head_dim() : 1;
  mask.entries.reserve(k);
  for (std::size_t i : idx) mask.entries.push_back(std::move(pool[i]));
  return mask;
}

void check_mask(const ParameterStore& params, const AblationMask& mask) {
  if (mask.width < 1) throw InvalidArgument("mask width must be positive");
  std::set<std::tuple<std::string, int, int>> seen;
  for (const auto& e : mask.entries) {
    if (!params.contains(e.path)) throw InvalidArgument("mask addresses unknown table " + e.path);
    const ad::Matrix& m = params.at(e.path);
    const long col_end = static_cast<long>(e.index + 1) * mask.width;
    if (e.row < 0 || e.row >= m.rows() || e.index < 0 || col_end > m.cols()) {
      throw InvalidArgument("mask entry (" + e.path + ", " + std::to_string(e.row) + ", " +
                            std::to_string(e.index) + ") outside the table");
    }
    if (!seen.emplace(e.path, e.row, e.index).second) {
      throw InvalidArgument("duplicate mask entry (" + e.path + ", " + std::to_string(e.row) +
                            ", " + std::to_string(e.index) + ")");
    }
  }
}

void zero_cells(ParameterStore& params, const AblationMask& mask) {
  check_mask(params, mask);
  for (const auto& e : mask.entries) {
    params.at(e.path).row(e.row).segment(static_cast<ad::Index>(e.index) * mask.width,
                                         mask.width).setZero();
  }
}

AblationHandle::AblationHandle(Model& model, AblationMask mask)
    : model_(&model), mask_(std::move(mask)) {
  ParameterStore& params = model.parameters();
  saved_.reserve(mask_.entries.size() * static_cast<std::size_t>(mask_.width));
  for (const auto& e : mask_.entries) {
    auto seg = params.at(e.path).row(e.row).segment(static_cast<ad::Index>(e.index) * mask_.width,
                                                    mask_.width);
    for (ad::Index j = 0; j < seg.size(); ++j) saved_.push_back(seg(j));
    seg.setZero();
  }
}

AblationHandle::AblationHandle(AblationHandle&& other) noexcept
    : model_(std::exchange(other.model_, nullptr)),
      mask_(std::move(other.mask_)),
      saved_(std::move(other.saved_)) {}

AblationHandle::~AblationHandle() { restore(); }

void AblationHandle::restore() {
  if (!model_) return;
  ParameterStore& params = model_->parameters();
  std::size_t k = 0;
  for (const auto& e : mask_.entries) {
    auto seg = params.at(e.path).row(e.row).segment(static_cast<ad::Index>(e.index) * mask_.width,
                                                    mask_.width);
    for (ad::Index j = 0; j < seg.size(); ++j) seg(j) = saved_[k++];
  }
  model_->unlock_parameters();
  model_ = nullptr;
}

AblationHandle apply(Model& model, const AblationMask& mask) {
  check_mask(model.parameters(), mask);
  if (!model.try_lock_parameters()) {
    throw ContractViolation("model parameters are already held by another ablation or training");
  }
  return AblationHandle(model, mask);
}

double measure_sparsity(const ad::Matrix& table, double threshold) {
  if (table.size() == 0) throw InvalidArgument("measure_sparsity: empty table");
  if (!(threshold > 0.0)) throw InvalidArgument("measure_sparsity: threshold must be > 0");
  long hits = 0;
  for (ad::Index i = 0; i < table.size(); ++i) hits += std::abs(table.data()[i]) <= threshold;
  return static_cast<double>(hits) / static_cast<double>(table.size());
}

nlohmann::json to_json(const AblationSpec& spec) {
  nlohmann::json j = {{"component", to_string(spec.component)},
                      {"percentage", spec.percentage},
                      {"scope", spec.block ? "single_block" : "all_blocks"},
                      {"block_index", nullptr},
                      {"granularity", to_string(spec.granularity)},
                      {"seed", spec.seed}};
  if (spec.block) j["block_index"] = *spec.block;
  return j;
}

AblationSpec ablation_spec_from_json(const nlohmann::json& doc) {
  try {
    AblationSpec spec;
    spec.component = component_from_string(doc.at("component").get<std::string>());
    spec.percentage = doc.at("percentage").get<double>();
    const std::string scope = doc.at("scope").get<std::string>();
    if (scope == "single_block") {
      spec.block = doc.at("block_index").get<int>();
    } else if (scope != "all_blocks") {
      throw ParseError("unknown scope '" + scope + "'");
    }
    spec.granularity = granularity_from_string(doc.at("granularity").get<std::string>());
    spec.seed = doc.at("seed").get<std::uint64_t>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ablation spec: ") + e.what());
  }
}

nlohmann::json to_json(const AblationMask& mask) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : mask.entries) entries.push_back({e.path, e.row, e.index});
  return {{"spec", to_json(mask.spec)},
          {"width", mask.width},
          {"subunit_count", mask.entries.size()},
          {"entries", std::move(entries)}};
}

AblationMask ablation_mask_from_json(const nlohmann::json& doc) {
  AblationMask mask;
  try {
    mask.spec = ablation_spec_from_json(doc.at("spec"));
    mask.width = doc.at("width").get<int>();
    const auto& entries = doc.at("entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (!e.is_array() || e.size() != 3) {
        throw ParseError("entries[" + std::to_string(i) + "]: expected [path, row, index]");
      }
      mask.entries.push_back({e[0].get<std::string>(), e[1].get<int>(), e[2].get<int>()});
    }
    if (doc.at("subunit_count").get<std::size_t>() != mask.entries.size()) {
      throw ParseError("subunit_count disagrees with the number of entries");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ablation mask: ") + e.what());
  }
  return mask;
}

}  // namespace dettoy
