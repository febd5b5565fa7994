#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgrpo/program.hpp"
#include "mmgrpo/types.hpp"

namespace mmgrpo {

struct EnvParams {
  int vocab = 8;
  int chain_len = 2;      // chain: number of sequential modules
  int hops = 2;           // multihop-copy: query/evidence rounds before answering
  int out_len = 1;        // tokens sampled per module call; rewards read the first
  int dataset_size = 32;
  std::uint64_t dataset_seed = 0;
};

// A fully wired synthetic environment. Rewards are in {0, 1}; both reference
// expectations below are closed-form (see each builder in envs.cpp).
struct BuiltinEnv {
  std::string name;
  ProgramSpec program;
  std::vector<DatasetExample> dataset;
  RewardFn reward;
  double optimal_expected_reward = 1.0;
  double uniform_expected_reward = 0.0;  // under an all-uniform policy bank
};

// name is one of:
//   chain         k sequential modules; each must echo the key token its
//                 prompt carries ("chain-3" style names override chain_len)
//   branch        a router module whose output parity selects one of two
//                 responder modules; the responder must echo the key
//   multihop-copy a query module called `hops` times, each copying forward
//                 the evidence the environment returned for its previous
//                 query, then an answer module echoing the final evidence
BuiltinEnv make_builtin_env(const std::string& name, const EnvParams& params = {});

}  // namespace mmgrpo
