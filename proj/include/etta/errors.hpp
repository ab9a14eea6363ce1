// Copyright 2026 The ETTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace etta {

// Base of every error raised by the engine. Subclasses name the contract
// that was violated so callers and tests can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ETTA_DEFINE_ERROR(Name) \
  class Name : public Error {   \
   public:                      \
    using Error::Error;         \
  }

ETTA_DEFINE_ERROR(DimensionError);
ETTA_DEFINE_ERROR(IndexError);
ETTA_DEFINE_ERROR(ConfigError);
ETTA_DEFINE_ERROR(ScheduleError);
ETTA_DEFINE_ERROR(PlanError);
ETTA_DEFINE_ERROR(StateError);
ETTA_DEFINE_ERROR(FormatError);
ETTA_DEFINE_ERROR(DataError);
ETTA_DEFINE_ERROR(ContractError);
ETTA_DEFINE_ERROR(ValidationError);
ETTA_DEFINE_ERROR(NumericError);

#undef ETTA_DEFINE_ERROR

}  // namespace etta
