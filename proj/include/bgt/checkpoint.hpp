#pragma once

// Binary checkpoint file, little-endian:
//
//   magic        8 bytes  "BGTCKPT\0"
//   version      u32      1
//   meta_len     u64      followed by meta_len bytes of JSON:
//                         {"config": ModelConfig, "extra": object}
//   tokenizer    u64      Tokenizer::fingerprint()
//   step         i64      optimizer updates completed
//   epoch        i64      epoch containing the next batch
//   batch        i64      index of the next batch within that epoch
//   n_params     u64
//   n_params x { name_len u32, name bytes, rows u64, cols u64, rows*cols f64 row-major }
//   has_adam     u8
//   if has_adam: adam_step i64, then for each parameter in order m (rows*cols f64)
//                followed by v (rows*cols f64)

#include "bgt/model.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace bgt::model {

struct AdamMoments {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

struct TrainingCursor {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t batch = 0;
};

struct Checkpoint {
  ModelConfig config;
  nlohmann::json extra = nlohmann::json::object();
  std::uint64_t tokenizer_hash = 0;
  TrainingCursor cursor;
  std::vector<std::pair<std::string, Matrix>> params;
  bool has_adam = false;
  AdamMoments adam;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const BgtModel& model, std::uint64_t tokenizer_hash,
                     const TrainingCursor& cursor = {}, const AdamMoments* adam = nullptr,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Builds the model described by the checkpoint and copies its weights in.
std::unique_ptr<BgtModel> restore_model(const Checkpoint& ckpt);
std::unique_ptr<BgtModel> load_model(const std::filesystem::path& path);

}  // namespace bgt::model
