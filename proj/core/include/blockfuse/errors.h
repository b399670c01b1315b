// Copyright 2026 The Blockfuse Authors. All Rights Reserved.
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

namespace blockfuse {

/// Base of every error raised by the library. `kind()` is a stable short tag
/// used in the CLI's JSON error objects.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define BLOCKFUSE_DEFINE_ERROR(Name, Base, tag)                        \
  class Name : public Base {                                           \
   public:                                                             \
    explicit Name(const std::string& what) : Base(what) {}             \
    const char* kind() const noexcept override { return tag; }         \
  }

BLOCKFUSE_DEFINE_ERROR(ShapeError, Error, "shape");
BLOCKFUSE_DEFINE_ERROR(NumericError, Error, "numeric");
BLOCKFUSE_DEFINE_ERROR(IrError, Error, "ir");
BLOCKFUSE_DEFINE_ERROR(ValidationError, IrError, "validation");
BLOCKFUSE_DEFINE_ERROR(ParseError, Error, "parse");
BLOCKFUSE_DEFINE_ERROR(FormatError, Error, "format");
BLOCKFUSE_DEFINE_ERROR(MergeError, Error, "merge");
BLOCKFUSE_DEFINE_ERROR(PreconditionError, MergeError, "precondition");
BLOCKFUSE_DEFINE_ERROR(TrainError, Error, "train");
BLOCKFUSE_DEFINE_ERROR(CostError, Error, "cost");

#undef BLOCKFUSE_DEFINE_ERROR

}  // namespace blockfuse
