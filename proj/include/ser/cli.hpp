// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_CLI_HPP_
#define SERKIT_CLI_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ser/melspec.hpp"

namespace ser::cli {

// Runs one CLI invocation; `args` excludes the program name. Returns 0 on
// success, 1 on domain errors, 2 on usage errors.
int dispatch(const std::vector<std::string>& args);

// Featurize with a content-addressed cache: the key hashes the WAV bytes,
// the mel parameters, and the target rate, so unchanged inputs are never
// re-featurized. `hit` reports whether the cache satisfied the request.
melspec::Image cached_featurize(const std::string& wav_path,
                                const melspec::MelParams& params,
                                int target_rate_hz,
                                const std::string& cache_dir, bool* hit);

}  // namespace ser::cli

#endif  // SERKIT_CLI_HPP_
