#pragma once

namespace covergen::cli {

int run(int argc, char** argv);

}  // namespace covergen::cli
