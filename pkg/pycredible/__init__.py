from ._version import __version__
from .Linalg import *
from .Spec import *
from .Stability import *
from .Codegen import *
from .Annotation import *
from .Propagation import *
from .Checker import *
