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

#include "jmsi/checkpoint.h"

#include <fstream>

#include "jmsi/binary_io.h"
#include "jmsi/config.h"
#include "jmsi/error.h"

namespace jmsi {

void write_checkpoint(std::ostream& out, const Model<float>& model,
                      const AdamState<float>* optimizer) {
  out.write("JMSC", 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_string(out, to_json(model.config()).dump());
  const auto& layout = model.layout();
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.specs.size()));
  const auto values = model.params().values();
  for (const auto& spec : layout.specs) {
    io::write_string(out, spec.name);
    io::write_le<std::uint32_t>(out, 2);
    io::write_le<std::uint32_t>(out, spec.rows);
    io::write_le<std::uint32_t>(out, spec.cols);
    for (std::size_t i = 0; i < spec.size(); ++i) io::write_f32(out, values[spec.offset + i]);
  }
  io::write_le<std::uint32_t>(out, optimizer != nullptr);
  if (optimizer != nullptr) {
    io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(optimizer->step));
    for (float v : optimizer->m.values()) io::write_f32(out, v);
    for (float v : optimizer->v.values()) io::write_f32(out, v);
  }
  if (!out) data_error("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, "JMSC");
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    data_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(io::read_string(in)));
  } catch (const nlohmann::json::exception& e) {
    data_error(std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const Error& e) {
    data_error(std::string("checkpoint config: ") + e.what());
  }
  Checkpoint ckpt{Model<float>(cfg), std::nullopt};
  const auto& layout = ckpt.model.layout();
  std::vector<bool> seen(layout.specs.size(), false);
  const auto count = io::read_le<std::uint32_t>(in);
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::string name = io::read_string(in);
    const auto rank = io::read_le<std::uint32_t>(in);
    std::size_t size = 1;
    std::vector<std::uint32_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) {
      dims.push_back(io::read_le<std::uint32_t>(in));
      size *= dims.back();
    }
    const int id = layout.find(name);
    if (id < 0) data_error("checkpoint has unknown parameter '" + name + "'");
    const auto& spec = layout.specs[id];
    if (size != spec.size() || dims.size() != 2 ||
        dims[0] != static_cast<std::uint32_t>(spec.rows)) {
      data_error("checkpoint parameter '" + name + "' has the wrong shape");
    }
    auto values = ckpt.model.params().values().subspan(spec.offset, spec.size());
    for (auto& v : values) v = io::read_f32(in);
    seen[id] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) data_error("checkpoint lacks parameter '" + layout.specs[i].name + "'");
  }
  if (io::read_le<std::uint32_t>(in) != 0) {
    AdamState<float> state(ckpt.model.params().shared_layout());
    state.step = static_cast<std::int64_t>(io::read_le<std::uint64_t>(in));
    for (auto& v : state.m.values()) v = io::read_f32(in);
    for (auto& v : state.v.values()) v = io::read_f32(in);
    ckpt.optimizer = std::move(state);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState<float>* optimizer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) data_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, model, optimizer);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace jmsi
