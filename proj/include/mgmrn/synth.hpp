// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mgmrn/datamodel.hpp"

namespace mgmrn {

/// Deterministic synthetic dataset: every class owns a distinct binary
/// attribute signature, and every active attribute is rendered as a colored
/// patch at an attribute-specific cell of the image, plus pixel noise.
/// Calling this twice with the same spec produces byte-identical bundles.
DatasetBundle synth_generate(const SynthSpec& spec);

}  // namespace mgmrn
