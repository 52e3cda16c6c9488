# -*- coding: utf-8 -*-
"""
   surveypost.__about__
   ~~~~~~~~~~~~~~~~~~~~
"""
__version__ = '0.1.0'
__license__ = 'BSD'
__author__ = 'What! Studio'
__maintainer__ = 'Heungsub Lee'
__maintainer_email__ = 'sub@nexon.co.kr'
