#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ltr/model.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

// Layout (little-endian):
//   "LTRC" | version u32 | config-length u32 | config JSON | vocab-length u32 |
//   vocab symbols | rng key u64 | rng counter u64 |
//   records... | FNV-1a 64 of the record bytes
// record: name-length u32 | name | rank u32 | dims u32 x rank | dtype u8
//         (0 = f32, 1 = f64) | raw values
// The config JSON carries a "record_checksums" table so a corrupt body can be
// traced to the record that no longer matches.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  std::uint8_t dtype = 0;
  std::string bytes;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  nlohmann::json config = nlohmann::json::object();
  std::string vocabulary;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  std::vector<TensorRecord> records;

  template <typename T>
  void add(std::string name, const Tensor<T>& t);
  const TensorRecord* find(std::string_view name) const;
  // Converts f32 <-> f64 as needed.
  template <typename T>
  Tensor<T> get(std::string_view name) const;

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes, const std::string& source = "checkpoint");
  // Atomic: writes a temporary file, then renames it over `path`.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

// Parameters as records, named as in ModelParams, plus the model config under
// config["model"] and the standard vocabulary.
template <typename T>
void put_model(Checkpoint& ck, const ModelParams<T>& p);

// Rebuilds parameters from config["model"]; every parameter must appear
// exactly once among the non-"opt." records.
template <typename T>
ModelParams<T> get_model(const Checkpoint& ck);

}  // namespace ltr
