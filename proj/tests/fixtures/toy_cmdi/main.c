#include <stdio.h>

#include "lookup.h"

int main(int argc, char **argv)
{
    if (argc != 2) {
        fprintf(stderr, "usage: %s NAME\n", argv[0]);
        return 2;
    }
    return run_lookup(argv[1]) == 0 ? 0 : 1;
}
