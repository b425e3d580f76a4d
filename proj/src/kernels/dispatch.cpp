#include <cstdlib>
#include <string>

#include "datforge/errors.hpp"
#include "datforge/kernels.hpp"

namespace datforge::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(DATFORGE_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa))
    throw ArgumentError("kernel ISA '" + std::string(isa_name(isa)) +
                        "' is not available on this host");
#if defined(DATFORGE_HAVE_AVX2)
  if (isa == Isa::avx2) return detail::avx2_table();
#endif
  return detail::scalar_table();
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::scalar};
  if (supported(Isa::avx2)) out.push_back(Isa::avx2);
  return out;
}

namespace {

const KernelTable& select() {
  if (const char* env = std::getenv("DATFORGE_ISA")) {
    const std::string want(env);
    if (want == "scalar") return table(Isa::scalar);
    if (want == "avx2" && supported(Isa::avx2)) return table(Isa::avx2);
  }
  if (supported(Isa::avx2)) return table(Isa::avx2);
  return table(Isa::scalar);
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& chosen = select();
  return chosen;
}

}  // namespace datforge::kernels
