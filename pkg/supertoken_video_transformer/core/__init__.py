from .tensor import DArray, Tape
from .module import Module
from .instrument import MacCounter

__all__ = ['DArray', 'Tape', 'Module', 'MacCounter']
