#include "ckconv/ckconv.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "core/common.hpp"
#include "core/train.hpp"

struct ckc_engine {
  std::string last_error;
};

namespace {

using Verb = nlohmann::json (*)(const nlohmann::json&);

ckc_status run_verb(ckc_engine* eng, const char* options_json, char** result_json, Verb verb) {
  if (!eng) return CKC_ERROR;
  eng->last_error.clear();
  if (result_json) *result_json = nullptr;
  try {
    if (!options_json) ckconv::fail(ckconv::ErrorKind::config, "options JSON is null");
    nlohmann::json opts;
    try {
      opts = nlohmann::json::parse(options_json);
    } catch (const nlohmann::json::exception& e) {
      ckconv::fail(ckconv::ErrorKind::config, std::string("bad options JSON: ") + e.what());
    }
    const std::string out = verb(opts).dump();
    if (result_json) {
      char* buf = static_cast<char*>(std::malloc(out.size() + 1));
      if (!buf) {
        eng->last_error = "out of memory";
        return CKC_ERROR;
      }
      std::memcpy(buf, out.c_str(), out.size() + 1);
      *result_json = buf;
    }
    return CKC_OK;
  } catch (const ckconv::Error& e) {
    eng->last_error = e.what();
    return static_cast<ckc_status>(e.exit_code());
  } catch (const std::exception& e) {
    eng->last_error = e.what();
    return CKC_ERROR;
  }
}

}  // namespace

extern "C" {

ckc_engine* ckc_engine_create(void) { return new (std::nothrow) ckc_engine(); }

void ckc_engine_destroy(ckc_engine* eng) { delete eng; }

const char* ckc_last_error(const ckc_engine* eng) { return eng ? eng->last_error.c_str() : ""; }

ckc_status ckc_train(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::train);
}

ckc_status ckc_evaluate(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::evaluate);
}

ckc_status ckc_fit_kernel(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::fit_kernel);
}

ckc_status ckc_generate(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::generate);
}

ckc_status ckc_resample_report(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::resample_report);
}

ckc_status ckc_equivalence_report(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::equivalence_report);
}

ckc_status ckc_sweep(ckc_engine* eng, const char* options_json, char** result_json) {
  return run_verb(eng, options_json, result_json, &ckconv::sweep);
}

void ckc_string_free(char* s) { std::free(s); }

const char* ckc_version(void) { return "1.0.0"; }

}  // extern "C"
