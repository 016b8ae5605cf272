from ._liparch import *  # noqa: F401,F403
