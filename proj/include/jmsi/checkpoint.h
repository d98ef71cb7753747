/*
 * Copyright 2026 The JMSI Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef JMSI_CHECKPOINT_H_
#define JMSI_CHECKPOINT_H_

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "jmsi/model.h"
#include "jmsi/training.h"

namespace jmsi {

// "JMSC", version u32, ModelConfig as a length-prefixed JSON string, then
// u32 count of named arrays (name, u32 rank, u32 dims..., f32 values), then
// u32 optimizer flag followed by u64 step and the first/second Adam moments
// in layout order. Little-endian throughout.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::optional<AdamState<float>> optimizer;
};

void write_checkpoint(std::ostream& out, const Model<float>& model,
                      const AdamState<float>* optimizer = nullptr);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace jmsi

#endif  // JMSI_CHECKPOINT_H_
