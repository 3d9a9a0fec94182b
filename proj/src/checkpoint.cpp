#include "vpa/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace vpa {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'V', 'P', 'A', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointExtras& extras) {
  std::vector<double> payload;
  json params = json::array();
  for (const auto& [name, t] : store.items()) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"offset", payload.size()},
                      {"count", t.numel()}});
    payload.insert(payload.end(), t.values().begin(), t.values().end());
  }
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                         static_cast<uInt>(payload.size() * sizeof(double)));
  json header = {{"version", 1},
                 {"params", params},
                 {"payload_doubles", payload.size()},
                 {"payload_crc32", crc},
                 {"basis_counts", extras.basis_counts},
                 {"config", extras.config_dump}};
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(double)));
}

CheckpointExtras load_checkpoint(const std::string& path, ParamStore& store,
                                 bool allow_missing) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char magic[8];
  if (!f.read(magic, sizeof(magic)))
    throw DataError("truncated: checkpoint shorter than its magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("version-mismatch: not a recognized checkpoint file");
  std::uint64_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    throw DataError("truncated: checkpoint header length missing");
  std::string hs(hlen, '\0');
  if (!f.read(hs.data(), static_cast<std::streamsize>(hlen)))
    throw DataError("truncated: checkpoint header incomplete");
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw DataError("version-mismatch: unreadable checkpoint header");
  if (header.value("version", -1) != 1)
    throw DataError("version-mismatch: checkpoint version " +
                    std::to_string(header.value("version", -1)));

  const std::size_t n = header.at("payload_doubles").get<std::size_t>();
  std::vector<double> payload(n);
  if (!f.read(reinterpret_cast<char*>(payload.data()),
              static_cast<std::streamsize>(n * sizeof(double))))
    throw DataError("truncated: checkpoint payload incomplete");
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                         static_cast<uInt>(n * sizeof(double)));
  if (crc != header.at("payload_crc32").get<unsigned long>())
    throw DataError("checksum: checkpoint payload crc32 mismatch");

  std::size_t matched = 0;
  for (const auto& rec : header.at("params")) {
    const std::string name = rec.at("name");
    Tensor* t = store.find(name);
    if (!t)
      throw DataError("checkpoint parameter " + name + " unknown to this model");
    const Shape shape = rec.at("shape").get<Shape>();
    if (shape != t->shape())
      throw DataError("checkpoint parameter " + name + " has shape " +
                      shape_str(shape) + ", model expects " +
                      shape_str(t->shape()));
    const std::size_t off = rec.at("offset");
    const std::size_t cnt = rec.at("count");
    if (off + cnt > payload.size())
      throw DataError("truncated: parameter " + name + " extends past payload");
    std::copy(payload.begin() + off, payload.begin() + off + cnt,
              t->values().begin());
    ++matched;
  }
  if (!allow_missing && matched != store.items().size())
    throw DataError("checkpoint covers " + std::to_string(matched) + " of " +
                    std::to_string(store.items().size()) + " model parameters");

  CheckpointExtras extras;
  extras.basis_counts = header.value("basis_counts", std::vector<long>{});
  extras.config_dump = header.value("config", std::string{});
  return extras;
}

}  // namespace vpa
