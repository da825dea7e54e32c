#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "geoforge/digest.hpp"
#include "geoforge/geoscript.hpp"

namespace geoforge::geoscript {

// Runs renderer code through an arbitrary shell command. Each run gets a
// fresh scratch directory that is removed afterwards, success or not.
//
// Placeholders substituted into `command` (shell-quoted):
//   {code_file}    the program written to disk
//   {scratch_dir}  the per-run scratch directory (also the cwd)
//   {output}/{out} absolute path of expected_output
struct ExternalExecutorConfig {
  std::string command;
  // Relative to the scratch directory; must not escape it.
  std::filesystem::path expected_output = "image.png";
  std::chrono::milliseconds timeout{60'000};
  // Parent for scratch directories; empty means the system temp directory.
  std::filesystem::path working_dir;
  std::string code_file_name = "program.txt";
  // If set, occurrences of this path in the code are replaced by the
  // absolute expected_output, e.g. "/temp/image.png" for generated Wolfram
  // code that hard-codes its export target.
  std::string rewrite_export_path;
};

// Throws InvalidConfig.
void validate(const ExternalExecutorConfig& config);

// Keys: command, expected_output, timeout_secs, working_dir, code_file,
// rewrite_export_path. Unknown keys are InvalidConfig.
ExternalExecutorConfig executor_config_from(const std::map<std::string, std::string>& values);

// Throws Timeout, NonZeroExit (exit code in the message, stderr excerpt
// attached) or MissingOutput.
Bytes execute_external(std::string_view code, const ExternalExecutorConfig& config);

// Caps concurrent subprocesses at `max_concurrent`.
class ExternalExecutor {
 public:
  ExternalExecutor(ExternalExecutorConfig config, int max_concurrent);
  ~ExternalExecutor();
  ExternalExecutor(const ExternalExecutor&) = delete;
  ExternalExecutor& operator=(const ExternalExecutor&) = delete;

  Bytes run(std::string_view code);
  const ExternalExecutorConfig& config() const { return config_; }
  int peak_concurrency() const;

 private:
  struct Limiter;
  ExternalExecutorConfig config_;
  std::unique_ptr<Limiter> limiter_;
};

}  // namespace geoforge::geoscript
