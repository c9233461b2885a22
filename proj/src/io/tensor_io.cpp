#include <cstring>
#include <fstream>

#include "robarch/tensor_io.hpp"

namespace robarch {

namespace {

constexpr char kMagic[8] = {'R', 'B', 'A', 'R', 'C', 'H', '1', '\n'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError(path.string() + ": truncated archive");
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ull << 32)) throw IoError(path.string() + ": corrupt archive (length " + std::to_string(n) + ")");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError(path.string() + ": truncated archive");
  }
  return s;
}

}  // namespace

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("archive: no tensor named '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(kMagic, sizeof kMagic);
    const std::string meta = archive.meta.dump();
    put_u64(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_u64(out, archive.tensors.size());
    for (const auto& [name, t] : archive.tensors) {
      put_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u64(out, t.rank());
      for (std::size_t d : t.shape()) put_u64(out, d);
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw IoError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open archive");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + ": not a robarch archive");
  }
  Archive a;
  const std::string meta = get_bytes(in, get_u64(in, path), path);
  try {
    a.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt archive metadata: " + e.what());
  }
  const std::uint64_t count = get_u64(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_bytes(in, get_u64(in, path), path);
    const std::uint64_t rank = get_u64(in, path);
    if (rank > 8) throw IoError(path.string() + ": corrupt archive (rank)");
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(get_u64(in, path));
    Tensor t(shape);
    if (t.size() && !in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw IoError(path.string() + ": truncated archive");
    }
    a.add(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace robarch
