// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header.

#pragma once

#include "lorashield/adapter.hpp"
#include "lorashield/cli.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/diagnostics.hpp"
#include "lorashield/edit.hpp"
#include "lorashield/embedding_client.hpp"
#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"
#include "lorashield/service.hpp"
#include "lorashield/svd.hpp"
#include "lorashield/synthetic.hpp"
#include "lorashield/tensor_map.hpp"
#include "lorashield/verify.hpp"
