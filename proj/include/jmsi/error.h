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

#ifndef JMSI_ERROR_H_
#define JMSI_ERROR_H_

#include <stdexcept>
#include <string>

namespace jmsi {

// Failure categories map onto CLI exit codes (usage=1, data=2, numeric=3).
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void usage_error(const std::string& what) {
  throw Error(ErrorKind::kUsage, what);
}
[[noreturn]] inline void data_error(const std::string& what) {
  throw Error(ErrorKind::kData, what);
}
[[noreturn]] inline void numeric_error(const std::string& what) {
  throw Error(ErrorKind::kNumeric, what);
}

}  // namespace jmsi

#endif  // JMSI_ERROR_H_
