#include "dettoy/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "dettoy/error.hpp"

namespace dettoy {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'D', 'T', 'O', 'Y', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  template <typename T>
  T get(const char* what) {
    T value{};
    read(reinterpret_cast<char*>(&value), sizeof(T), what);
    return value;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint64_t>(what);
    if (n > (1u << 24)) fail(std::string("implausible length for ") + what);
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail(std::string("truncated at ") + what);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(origin_ + ": " + msg);
  }

 private:
  std::istream& in_;
  std::string origin_;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, to_json(model.config()).dump());
  const ParameterStore& params = model.parameters();
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, m] : params) {
    put_string(out, name);
    put<std::int64_t>(out, m.rows());
    put<std::int64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Reader r(in, path.string());
  std::array<char, 8> magic{};
  r.read(magic.data(), magic.size(), "magic");
  if (magic != kMagic) r.fail("not a dettoy checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(r.get_string("config")));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config: ") + e.what());
  }
  ParameterStore params;
  const auto count = r.get<std::uint64_t>("table count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string("table name");
    const auto rows = r.get<std::int64_t>("rows");
    const auto cols = r.get<std::int64_t>("cols");
    if (rows < 0 || cols < 0 || rows * cols > (1 << 26)) r.fail("bad shape for " + name);
    ad::Matrix m(rows, cols);
    r.read(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size(), name.c_str());
    params.add(name, std::move(m));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return Model(std::move(cfg), std::move(params));
}

}  // namespace dettoy
