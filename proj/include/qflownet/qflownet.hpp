// Copyright 2026 The QFlowNet Authors
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

#include "qflownet/adam.hpp"
#include "qflownet/canonical_key.hpp"
#include "qflownet/checkpoint.hpp"
#include "qflownet/config.hpp"
#include "qflownet/errors.hpp"
#include "qflownet/evaluation.hpp"
#include "qflownet/gate_algebra.hpp"
#include "qflownet/oracle.hpp"
#include "qflownet/policy_net.hpp"
#include "qflownet/report.hpp"
#include "qflownet/serialization.hpp"
#include "qflownet/synthesis_env.hpp"
#include "qflownet/tb_trainer.hpp"
