#include "noisyood/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "noisyood/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace noisyood {

uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<uint32_t>(crc);
}

namespace {

std::vector<unsigned char> encode_le(const Tensor& t) {
  std::vector<unsigned char> out(t.byte_size());
  auto put = [&](std::size_t i, uint32_t bits) {
    out[4 * i + 0] = static_cast<unsigned char>(bits & 0xffu);
    out[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xffu);
    out[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xffu);
    out[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xffu);
  };
  if (t.dtype() == DType::kFloat32) {
    auto v = t.f32();
    for (std::size_t i = 0; i < v.size(); ++i) put(i, std::bit_cast<uint32_t>(v[i]));
  } else {
    auto v = t.i32();
    for (std::size_t i = 0; i < v.size(); ++i) put(i, std::bit_cast<uint32_t>(v[i]));
  }
  return out;
}

Tensor decode_le(DType dtype, std::vector<int64_t> shape, const std::vector<unsigned char>& bytes) {
  const std::size_t n = bytes.size() / 4;
  auto get = [&](std::size_t i) {
    return static_cast<uint32_t>(bytes[4 * i]) | (static_cast<uint32_t>(bytes[4 * i + 1]) << 8) |
           (static_cast<uint32_t>(bytes[4 * i + 2]) << 16) | (static_cast<uint32_t>(bytes[4 * i + 3]) << 24);
  };
  if (dtype == DType::kFloat32) {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get(i));
    return Tensor::float32(std::move(shape), std::move(v));
  }
  std::vector<int32_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<int32_t>(get(i));
  return Tensor::int32(std::move(shape), std::move(v));
}

std::string file_name_for(const std::string& key) { return key + ".bin"; }

void write_store(const TensorBundle& store, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  json manifest = store.metadata.is_object() ? store.metadata : json::object();
  manifest["name"] = store.name;
  json entries = json::array();
  for (const auto& [key, tensor] : store.tensors) {
    if (key.empty() || key.find('/') != std::string::npos || key.find('\\') != std::string::npos) {
      throw ValidationError("tensor key '" + key + "' is not a valid file stem");
    }
    const auto bytes = encode_le(tensor);
    const std::string file = file_name_for(key);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + (dir / file).string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + (dir / file).string());
    entries.push_back({{"key", key},
                       {"dtype", to_string(tensor.dtype())},
                       {"shape", tensor.shape()},
                       {"file", file},
                       {"crc32", crc32(bytes)}});
  }
  manifest["tensors"] = std::move(entries);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest in " + dir.string());
}

TensorBundle read_store(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing manifest: " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw ValidationError("manifest " + manifest_path.string() + " lacks a tensor list");
  }

  TensorBundle store;
  store.name = manifest.value("name", std::string{});
  for (const auto& entry : manifest["tensors"]) {
    const std::string key = entry.at("key").get<std::string>();
    const DType dtype = dtype_from_string(entry.at("dtype").get<std::string>());
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const std::string file = entry.at("file").get<std::string>();
    const uint32_t expected_crc = entry.at("crc32").get<uint32_t>();

    std::ifstream payload(dir / file, std::ios::binary);
    if (!payload) throw IoError("missing payload file " + (dir / file).string() + " for tensor '" + key + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(payload)), std::istreambuf_iterator<char>());

    int64_t numel = 1;
    for (int64_t s : shape) numel *= s;
    if (static_cast<int64_t>(bytes.size()) != numel * 4) {
      throw ValidationError("tensor '" + key + "': payload is " + std::to_string(bytes.size()) +
                            " bytes but shape implies " + std::to_string(numel * 4));
    }
    if (crc32(bytes) != expected_crc) {
      throw ValidationError("tensor '" + key + "': CRC32 mismatch in " + (dir / file).string());
    }
    store.tensors.emplace(key, decode_le(dtype, std::move(shape), bytes));
  }
  manifest.erase("name");
  manifest.erase("tensors");
  store.metadata = std::move(manifest);
  return store;
}

}  // namespace

void write_bundle(const TensorBundle& bundle, const fs::path& dir) {
  bundle.validate();
  write_store(bundle, dir);
}

TensorBundle read_bundle(const fs::path& dir) {
  TensorBundle bundle = read_store(dir);
  bundle.validate();
  return bundle;
}

void write_tensor_store(const TensorBundle& store, const fs::path& dir) {
  for (const auto& [key, t] : store.tensors) {
    if (!t.all_finite()) throw ValidationError("tensor '" + key + "' contains NaN or Inf");
  }
  write_store(store, dir);
}

TensorBundle read_tensor_store(const fs::path& dir) {
  TensorBundle store = read_store(dir);
  for (const auto& [key, t] : store.tensors) {
    if (!t.all_finite()) throw ValidationError("tensor '" + key + "' contains NaN or Inf");
  }
  return store;
}

void write_split_set(const SplitSet& split, const fs::path& root) {
  split.validate();
  write_bundle(split.train, root / "train");
  write_bundle(split.val, root / "val");
  write_bundle(split.test, root / "test");
  for (const auto& ood : split.ood_sets) write_bundle(ood, root / "ood" / ood.name);
  if (split.ood_val) write_bundle(*split.ood_val, root / "ood_val");
}

SplitSet read_split_set(const fs::path& root) {
  SplitSet split;
  split.train = read_bundle(root / "train");
  split.val = read_bundle(root / "val");
  split.test = read_bundle(root / "test");
  if (fs::is_directory(root / "ood")) {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root / "ood")) {
      if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) split.ood_sets.push_back(read_bundle(d));
  }
  if (fs::is_directory(root / "ood_val")) split.ood_val = read_bundle(root / "ood_val");
  split.validate();
  return split;
}

}  // namespace noisyood
