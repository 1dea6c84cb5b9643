// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
