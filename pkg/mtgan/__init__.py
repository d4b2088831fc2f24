__author__ = 'frank'
