#include "durl_app.hpp"

int main(int argc, char** argv) {
  return durl::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
