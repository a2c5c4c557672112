from setuptools import setup
from version import get_git_version

setup(name='uqseg',
      version=get_git_version(),
      description='Uncertainty evaluation, calibration and fusion for semantic segmentation',
      install_requires=['numpy', 'scipy', 'astropy', 'matplotlib', 'seaborn', 'progress', 'Pillow',
                        'scikit-image', 'scikit-learn', 'PyYAML'],
      packages=['uqseg'],
      package_data={'uqseg': ['data/*.yaml']},
      entry_points={'console_scripts': ['uqseg=uqseg.cli:main']},
      zip_safe=False)
