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

#ifndef JMSI_TOOLS_COMMANDS_H_
#define JMSI_TOOLS_COMMANDS_H_

namespace jmsi::cli {

// Parses argv, runs one command and returns the process exit status:
// 0 success, 1 usage error, 2 data error, 3 numeric failure.
int dispatch(int argc, char** argv);

}  // namespace jmsi::cli

#endif  // JMSI_TOOLS_COMMANDS_H_
