#pragma once

// Run configuration shared by the command-line tool and the play service.
//
// A run config is a JSON tree: {"version": 1, "env": {...}, "<subcommand>": {...},
// "output": {...}}. Every leaf has a default; a config file may set any subset
// of the leaves and nothing else. Each leaf is also a flag, e.g. --train.lambda.

#include <memory>
#include <string>
#include <vector>

#include "afn/env.hpp"
#include "afn/evalsuite.hpp"
#include "afn/games.hpp"
#include "afn/selfplay.hpp"
#include "json.hpp"

namespace afn::cli {

constexpr int kConfigVersion = 1;

const std::vector<std::string>& subcommands();

// Defaults for a subcommand; InvalidArgument for an unknown one.
nlohmann::json default_config(const std::string& subcommand);

// Overlays `overrides` onto `base`. Keys absent from `base` and leaves of a
// different JSON type are rejected with an InvalidArgument naming the key
// path. Integers are accepted where reals are expected.
void merge_strict(nlohmann::json& base, const nlohmann::json& overrides, const std::string& path = "");

// Dotted paths of every leaf ("train.lambda", ...), in document order.
std::vector<std::string> leaf_paths(const nlohmann::json& config);

// Sets the leaf at a dotted path from flag text, parsed by the leaf's type.
void set_leaf(nlohmann::json& config, const std::string& path, const std::string& text);

// Environment from the "env" section.
std::shared_ptr<const TreeEnv> make_env(const nlohmann::json& env_cfg);
// Board game from the "env" section; InvalidArgument for non-board games.
BoardGameSpec board_spec(const nlohmann::json& env_cfg);

// Agent from a roster entry: "uniform", "perfect", "search:<depth>" or
// "model:<checkpoint path>".
std::shared_ptr<Agent> make_agent(const std::string& spec, std::shared_ptr<const TreeEnv> env,
                                  std::uint64_t solver_budget = 200'000'000);

}  // namespace afn::cli
