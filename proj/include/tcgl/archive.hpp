#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tcgl/binary_io.hpp"
#include "tcgl/tensor.hpp"

namespace tcgl {

/// Directory holding a text manifest (name, shape, byte offset, crc32 per
/// tensor) and one little-endian blob. Used for checkpoints and galleries.
template <typename T>
struct Archive {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  void add(std::string name, Tensor<T> t) { tensors.emplace_back(std::move(name), std::move(t)); }

  const Tensor<T>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("archive: missing tensor '" + name + "'");
  }

  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("archive: missing meta '" + key + "'");
    return it->second;
  }

  friend bool operator==(const Archive&, const Archive&) = default;
};

inline constexpr int kArchiveVersion = 1;
inline const char* kArchiveManifest = "manifest.txt";
inline const char* kArchiveBlob = "tensors.bin";

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

/// Reads only the dtype line, so callers can pick the precision to load with.
inline std::string archive_dtype(const std::filesystem::path& dir) {
  std::ifstream in(dir / kArchiveManifest);
  if (!in) throw std::runtime_error("archive: cannot open " + (dir / kArchiveManifest).string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("dtype ", 0) == 0) return line.substr(6);
  }
  throw std::runtime_error("archive: manifest has no dtype line");
}

template <typename T>
void save_archive(const Archive<T>& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  std::ostringstream man;
  man << "tcgl-archive " << kArchiveVersion << '\n';
  man << "kind " << a.kind << '\n';
  man << "dtype " << dtype_name<T>() << '\n';
  for (const auto& [k, v] : a.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("archive: meta key/value not storable: '" + k + "'");
    }
    man << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& [name, t] : a.tensors) {
    const std::size_t offset = blob.size();
    for (T x : t.data()) io::put(blob, x);
    const std::size_t nbytes = blob.size() - offset;
    man << "tensor " << name << ' ' << t.rank();
    for (auto d : t.shape()) man << ' ' << d;
    man << ' ' << offset << ' ' << nbytes << ' ' << io::crc32(blob.data() + offset, nbytes) << '\n';
  }
  man << "blob " << blob.size() << ' ' << io::crc32(blob.data(), blob.size()) << '\n';
  std::string text = man.str();
  text += "end " + std::to_string(io::crc32(reinterpret_cast<const unsigned char*>(text.data()), text.size())) + '\n';

  // Blob first: a reader never sees a manifest pointing at a stale blob.
  {
    std::ofstream out(dir / kArchiveBlob, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("archive: cannot write " + (dir / kArchiveBlob).string());
    io::write_all(out, blob, (dir / kArchiveBlob).string());
  }
  std::ofstream out(dir / kArchiveManifest, std::ios::trunc);
  if (!out) throw std::runtime_error("archive: cannot write " + (dir / kArchiveManifest).string());
  out << text;
  if (!out) throw std::runtime_error("archive: write failed for " + (dir / kArchiveManifest).string());
}

template <typename T>
Archive<T> load_archive(const std::filesystem::path& dir) {
  const auto man_path = dir / kArchiveManifest;
  std::ifstream in(man_path);
  if (!in) throw std::runtime_error("archive: cannot open " + man_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  auto fail = [&](const std::string& why) -> void { throw std::runtime_error("archive " + dir.string() + ": " + why); };

  const auto end_pos = text.rfind("end ");
  if (end_pos == std::string::npos || (end_pos != 0 && text[end_pos - 1] != '\n')) fail("manifest truncated (no end line)");
  {
    std::uint64_t want = 0;
    std::istringstream es(text.substr(end_pos + 4));
    if (!(es >> want)) fail("manifest end line malformed");
    const auto got = io::crc32(reinterpret_cast<const unsigned char*>(text.data()), end_pos);
    if (got != want) fail("manifest checksum mismatch");
  }

  std::istringstream lines(text.substr(0, end_pos));
  std::string line;
  if (!std::getline(lines, line)) fail("empty manifest");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = -1;
    if (!(hs >> magic >> version) || magic != "tcgl-archive") fail("not an archive manifest");
    if (version != kArchiveVersion) {
      fail("version mismatch: file has " + std::to_string(version) + ", expected " + std::to_string(kArchiveVersion));
    }
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, nbytes;
    std::uint32_t crc;
  };
  Archive<T> a;
  std::vector<Entry> entries;
  bool have_blob = false, have_dtype = false;
  std::size_t blob_size = 0;
  std::uint32_t blob_crc = 0;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> a.kind;
    } else if (tag == "dtype") {
      std::string d;
      ls >> d;
      if (d != dtype_name<T>()) fail("dtype " + d + " does not match requested " + dtype_name<T>());
      have_dtype = true;
    } else if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      a.meta[key] = value;
    } else if (tag == "tensor") {
      Entry e;
      std::size_t rank = 0;
      if (!(ls >> e.name >> rank) || rank > 2) fail("bad tensor line: " + line);
      e.shape.resize(rank);
      for (auto& d : e.shape)
        if (!(ls >> d)) fail("bad tensor line: " + line);
      if (!(ls >> e.offset >> e.nbytes >> e.crc)) fail("bad tensor line: " + line);
      if (e.nbytes != element_count(e.shape) * sizeof(T)) fail("tensor '" + e.name + "' byte count does not match its shape");
      entries.push_back(std::move(e));
    } else if (tag == "blob") {
      if (!(ls >> blob_size >> blob_crc)) fail("bad blob line");
      have_blob = true;
    } else {
      fail("unrecognised manifest line: " + line);
    }
  }
  if (!have_dtype || !have_blob) fail("manifest missing dtype or blob line");

  std::ifstream bin(dir / kArchiveBlob, std::ios::binary);
  if (!bin) fail("cannot open blob");
  const auto blob = io::read_all(bin);
  if (blob.size() != blob_size) {
    fail("blob truncated: " + std::to_string(blob.size()) + " bytes, manifest says " + std::to_string(blob_size));
  }
  if (io::crc32(blob.data(), blob.size()) != blob_crc) fail("blob checksum mismatch");

  for (const auto& e : entries) {
    if (e.offset + e.nbytes > blob.size()) fail("tensor '" + e.name + "' extends past the blob");
    if (io::crc32(blob.data() + e.offset, e.nbytes) != e.crc) fail("tensor '" + e.name + "' checksum mismatch");
    std::vector<T> vals(element_count(e.shape));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = io::get<T>(blob.data() + e.offset + i * sizeof(T));
    a.add(e.name, Tensor<T>(e.shape, std::move(vals)));
  }
  return a;
}

}  // namespace tcgl
