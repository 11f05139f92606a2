#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dettoy/autograd.hpp"

namespace dettoy {

/// Named dense parameter tables. Iteration is in canonical (lexicographic) path order,
/// which is also the checkpoint order.
class ParameterStore {
 public:
  using Map = std::map<std::string, ad::Matrix>;

  ad::Matrix& add(const std::string& path, ad::Matrix init);
  ad::Matrix& at(const std::string& path);
  const ad::Matrix& at(const std::string& path) const;
  bool contains(const std::string& path) const { return tables_.count(path) > 0; }

  Map::const_iterator begin() const { return tables_.begin(); }
  Map::const_iterator end() const { return tables_.end(); }
  std::size_t size() const { return tables_.size(); }
  std::size_t scalar_count() const;

  /// FNV-1a over paths, shapes and the raw bytes of every value.
  std::uint64_t checksum() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.checksum() == b.checksum() && a.tables_.size() == b.tables_.size();
  }

 private:
  Map tables_;
};

/// Gradient tables keyed like a ParameterStore.
using Gradients = std::map<std::string, ad::Matrix>;

/// Binds parameters of a store to leaves of one tape, creating each leaf on first use.
class ParameterBinding {
 public:
  ParameterBinding(ad::Tape& tape, const ParameterStore& store) : tape_(tape), store_(store) {}

  ad::Var operator()(const std::string& path);
  ad::Tape& tape() const { return tape_; }
  const std::map<std::string, ad::Var>& bound() const { return bound_; }

  /// Adds each bound leaf's gradient into `out` (entries created as needed).
  void collect_gradients(Gradients& out, double factor = 1.0) const;

 private:
  ad::Tape& tape_;
  const ParameterStore& store_;
  std::map<std::string, ad::Var> bound_;
};

}  // namespace dettoy
