#include "dettoy/parameters.hpp"

#include <cstring>

#include "dettoy/error.hpp"

namespace dettoy {

ad::Matrix& ParameterStore::add(const std::string& path, ad::Matrix init) {
  auto [it, inserted] = tables_.emplace(path, std::move(init));
  if (!inserted) throw InvalidArgument("duplicate parameter path " + path);
  return it->second;
}

ad::Matrix& ParameterStore::at(const std::string& path) {
  auto it = tables_.find(path);
  if (it == tables_.end()) throw InvalidArgument("unknown parameter path " + path);
  return it->second;
}

const ad::Matrix& ParameterStore::at(const std::string& path) const {
  return const_cast<ParameterStore*>(this)->at(path);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : tables_) n += static_cast<std::size_t>(m.size());
  return n;
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [path, m] : tables_) {
    feed(path.data(), path.size());
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    feed(shape, sizeof(shape));
    feed(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  return h;
}

ad::Var ParameterBinding::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  ad::Var v = tape_.leaf(store_.at(path));
  bound_.emplace(path, v);
  return v;
}

void ParameterBinding::collect_gradients(Gradients& out, double factor) const {
  for (const auto& [path, var] : bound_) {
    const ad::Matrix* g = tape_.grad(var);
    if (!g) continue;
    auto it = out.find(path);
    if (it == out.end()) {
      out.emplace(path, factor * (*g));
    } else {
      it->second += factor * (*g);
    }
  }
}

}  // namespace dettoy
