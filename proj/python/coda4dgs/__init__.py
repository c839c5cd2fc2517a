from _coda4dgs import *  # noqa: F401,F403
