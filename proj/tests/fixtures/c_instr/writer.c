#include <stdio.h>

int read_config(const char *line);

static int
vulnerable_parse(const char *arg)
{
    // the second definition keeps the body on its own line
    if (arg[0] == '-') {
        return 1;
    }
    printf("arg: %s\n", arg);
    return 0;
}

int main(int argc, char **argv)
{
    int rc = 0;
    const char *call = "vulnerable_parse(\"in a string\")";
    (void)call;
    rc |= read_config(argc > 1 ? argv[1] : "mode=fast");
    rc |= vulnerable_parse(argc > 2 ? argv[2] : "-x");
    printf("rc=%d\n", rc);
    return rc == 0 ? 0 : 3;
}
