#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include "robarch/manifest.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace fs = std::filesystem;

namespace {

struct DigestCtx {
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw IoError("sha256: OpenSSL init failed");
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
  DigestCtx(const DigestCtx&) = delete;
  DigestCtx& operator=(const DigestCtx&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx, data, n) != 1) throw IoError("sha256: update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, md, &len) != 1) throw IoError("sha256: final failed");
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) {
      s += digits[md[i] >> 4];
      s += digits[md[i] & 15];
    }
    return s;
  }

  EVP_MD_CTX* ctx;
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_hex(const std::string& text) {
  DigestCtx d;
  d.update(text.data(), text.size());
  return d.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for hashing");
  DigestCtx d;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    d.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

std::string sha256_tensor(const Tensor& t) {
  DigestCtx d;
  for (std::size_t s : t.shape()) {
    const std::uint64_t v = s;
    d.update(&v, sizeof v);
  }
  d.update(t.data(), t.size() * sizeof(double));
  return d.hex();
}

void RunManifest::add(const fs::path& root, const fs::path& file) {
  const fs::path abs = file.is_absolute() ? file : root / file;
  artifacts.push_back({fs::relative(abs, root).generic_string(), sha256_file(abs)});
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : m.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
  return {{"command", m.command}, {"config", m.config}, {"seed", m.seed}, {"artifacts", arts}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& a : j.at("artifacts")) m.artifacts.push_back({a.at("path"), a.at("sha256")});
  return m;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  write_text_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& dir) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_text_file(dir / "manifest.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": malformed manifest: " + e.what());
  }
}

std::vector<std::string> verify_manifest(const fs::path& dir) {
  std::vector<std::string> bad;
  for (const auto& a : read_manifest(dir).artifacts) {
    const fs::path p = dir / a.path;
    if (!fs::exists(p) || sha256_file(p) != a.sha256) bad.push_back(a.path);
  }
  return bad;
}

fs::path create_run_directory(const fs::path& parent, const nlohmann::json& config) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = std::string(stamp) + "_" + sha256_hex(config.dump()).substr(0, 12);
  fs::create_directories(parent);
  for (int k = 0;; ++k) {
    const fs::path p = parent / (k == 0 ? base : base + "-" + std::to_string(k));
    if (fs::create_directory(p)) return p;
  }
}

}  // namespace robarch
