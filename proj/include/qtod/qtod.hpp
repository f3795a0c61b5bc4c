// Copyright 2026 The qtod Authors.
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

#include "qtod/backend.hpp"
#include "qtod/convert.hpp"
#include "qtod/data.hpp"
#include "qtod/dialogue.hpp"
#include "qtod/error.hpp"
#include "qtod/eval.hpp"
#include "qtod/kb.hpp"
#include "qtod/metrics.hpp"
#include "qtod/pipeline.hpp"
#include "qtod/prompts.hpp"
#include "qtod/random.hpp"
#include "qtod/remote.hpp"
#include "qtod/retriever.hpp"
#include "qtod/rule_backend.hpp"
#include "qtod/synthetic.hpp"
#include "qtod/text.hpp"
